"""Seeded point-prompt selection harness for interactive 3D segmentation.

Decomposes ground-truth masks into boundary/margin/center sub-regions,
samples prompts under deterministic selection strategies, runs pluggable
segmentation backends over a seeded grid, and reports Dice / normalized
surface Dice variability.
"""

__version__ = "0.1.0"

from .volume import (
    Volume3,
    Mask,
    VolumeIOError,
    load_volume,
    save_volume,
    preprocess_intensity,
    make_mask,
    mask_array,
    like,
)
from .subregion import SubRegions, avg_pool, decompose, union_region, region_tag
from .sampling import (
    SplitMix64,
    SamplingError,
    Prompt,
    PromptSet,
    StrategySpec,
    region_permutation,
    sample_prompts,
    build_strategy_prompts,
    derive_seeds,
    prompt_set_to_json,
    prompt_set_from_json,
)
from .metrics import MetricRecord, dice, surface_voxels, edt, nsd
from .segmenter import (
    OracleParams,
    ProtocolError,
    synthetic_segment,
    external_segment,
    SyntheticOracleBackend,
    ExternalProcessBackend,
)
from .experiment import (
    ConfigError,
    Subject,
    ExperimentConfig,
    RunRecord,
    ResultTable,
    run_experiment,
    load_results,
    paired_ttest,
    TTestResult,
    compare_strategies,
    group_by_dice,
    render_table,
    format_mean_std,
    config_from_json,
    config_to_json,
)

__all__ = [
    "Volume3",
    "Mask",
    "VolumeIOError",
    "load_volume",
    "save_volume",
    "preprocess_intensity",
    "make_mask",
    "mask_array",
    "like",
    "SubRegions",
    "avg_pool",
    "decompose",
    "union_region",
    "region_tag",
    "SplitMix64",
    "SamplingError",
    "Prompt",
    "PromptSet",
    "StrategySpec",
    "region_permutation",
    "sample_prompts",
    "build_strategy_prompts",
    "derive_seeds",
    "prompt_set_to_json",
    "prompt_set_from_json",
    "MetricRecord",
    "dice",
    "surface_voxels",
    "edt",
    "nsd",
    "OracleParams",
    "ProtocolError",
    "synthetic_segment",
    "external_segment",
    "SyntheticOracleBackend",
    "ExternalProcessBackend",
    "ConfigError",
    "Subject",
    "ExperimentConfig",
    "RunRecord",
    "ResultTable",
    "run_experiment",
    "load_results",
    "paired_ttest",
    "TTestResult",
    "compare_strategies",
    "group_by_dice",
    "render_table",
    "format_mean_std",
    "config_from_json",
    "config_to_json",
]
