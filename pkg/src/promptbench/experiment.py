"""Seeded strategy-grid runner, aggregation, significance tests, and reports.

A grid cell is one (strategy, prompt count, seed, subject) combination. Cells
are independent and may run in parallel; results are canonically sorted
before they are written, so the output is byte-identical no matter how many
workers ran or in which order cells finished.

Aggregation follows the run convention: for each (strategy, count), metrics
are first averaged over subjects per seed, then the mean and population std
are taken over those per-seed means. The paired t-test uses the sample std.
"""

from __future__ import annotations

import json
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betainc

from . import metrics as metrics_mod
from .sampling import (
    SamplingError,
    StrategySpec,
    build_strategy_prompts,
    derive_seeds,
    strategy_from_json,
    strategy_to_json,
)
from .segmenter import (
    ExternalProcessBackend,
    ProtocolError,
    backend_from_json,
    backend_to_json,
)
from .subregion import decompose, region_tag
from .volume import load_volume, mask_array

__all__ = [
    "ConfigError",
    "Subject",
    "ExperimentConfig",
    "RunRecord",
    "CellStats",
    "ResultTable",
    "run_experiment",
    "load_results",
    "paired_ttest",
    "TTestResult",
    "group_by_dice",
    "render_table",
    "format_mean_std",
    "config_from_json",
    "config_to_json",
]

DEFAULT_PROMPT_COUNTS = (1, 5, 10, 20, 100)
DEFAULT_N_SEEDS = 50


class ConfigError(ValueError):
    """Malformed experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class Subject:
    case_id: str
    gt_path: Path
    image_path: Optional[Path] = None


@dataclass(frozen=True)
class ExperimentConfig:
    subjects: Tuple[Subject, ...]
    strategies: Tuple[StrategySpec, ...]
    backend: object
    output_dir: Path
    prompt_counts: Tuple[int, ...] = DEFAULT_PROMPT_COUNTS
    seeds: Tuple[int, ...] = ()
    master_seed: int = 1
    n_seeds: int = DEFAULT_N_SEEDS
    fixed_seed: Optional[int] = None
    tau_mm: float = 1.0

    def __post_init__(self):
        if not self.subjects:
            raise ConfigError("subjects: must be nonempty")
        if not self.strategies:
            raise ConfigError("strategies: must be nonempty")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ConfigError("strategies: names must be unique")
        if any(c < 1 for c in self.prompt_counts):
            raise ConfigError("prompt_counts: all counts must be >= 1")
        if self.tau_mm <= 0:
            raise ConfigError("tau_mm: must be > 0")
        if not self.seeds and self.n_seeds < 1:
            raise ConfigError("n_seeds: must be >= 1 when seeds are not given")

    def resolved_seeds(self) -> Tuple[int, ...]:
        if self.seeds:
            return tuple(int(s) for s in self.seeds)
        return derive_seeds(self.master_seed, self.n_seeds)

    def resolved_fixed_seed(self) -> int:
        return self.master_seed if self.fixed_seed is None else self.fixed_seed


def config_to_json(config: ExperimentConfig) -> dict:
    obj = {
        "subjects": [
            {
                "case_id": s.case_id,
                "gt": str(s.gt_path),
                **({"image": str(s.image_path)} if s.image_path else {}),
            }
            for s in config.subjects
        ],
        "strategies": [strategy_to_json(s) for s in config.strategies],
        "backend": backend_to_json(config.backend),
        "output_dir": str(config.output_dir),
        "prompt_counts": list(config.prompt_counts),
        "master_seed": config.master_seed,
        "n_seeds": config.n_seeds,
        "tau_mm": config.tau_mm,
    }
    if config.seeds:
        obj["seeds"] = list(config.seeds)
    if config.fixed_seed is not None:
        obj["fixed_seed"] = config.fixed_seed
    return obj


def config_from_json(obj: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse a config dict (the schema of config_to_json), resolving paths.

    Relative paths resolve against ``base_dir`` (typically the config file's
    directory). Raises ConfigError naming the bad field.
    """

    def path_of(value: str) -> Path:
        p = Path(value)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return p

    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    subjects = []
    raw_subjects = obj.get("subjects")
    if not isinstance(raw_subjects, list) or not raw_subjects:
        raise ConfigError("subjects: required, nonempty list")
    for i, s in enumerate(raw_subjects):
        if "case_id" not in s or "gt" not in s:
            raise ConfigError(f"subjects[{i}]: needs case_id and gt")
        subjects.append(
            Subject(
                case_id=str(s["case_id"]),
                gt_path=path_of(s["gt"]),
                image_path=path_of(s["image"]) if "image" in s else None,
            )
        )
    raw_strategies = obj.get("strategies")
    if not isinstance(raw_strategies, list) or not raw_strategies:
        raise ConfigError("strategies: required, nonempty list")
    strategies = []
    for i, s in enumerate(raw_strategies):
        try:
            strategies.append(strategy_from_json(s))
        except ValueError as e:
            raise ConfigError(f"strategies[{i}]: {e}") from e
    if "backend" not in obj:
        raise ConfigError("backend: required")
    try:
        backend = backend_from_json(obj["backend"])
    except ValueError as e:
        raise ConfigError(f"backend: {e}") from e
    if "output_dir" not in obj:
        raise ConfigError("output_dir: required")
    kwargs = {}
    if "prompt_counts" in obj:
        kwargs["prompt_counts"] = tuple(int(c) for c in obj["prompt_counts"])
    if "seeds" in obj:
        kwargs["seeds"] = tuple(int(s) for s in obj["seeds"])
    if "master_seed" in obj:
        kwargs["master_seed"] = int(obj["master_seed"])
    if "n_seeds" in obj:
        kwargs["n_seeds"] = int(obj["n_seeds"])
    if "fixed_seed" in obj:
        kwargs["fixed_seed"] = int(obj["fixed_seed"])
    if "tau_mm" in obj:
        kwargs["tau_mm"] = float(obj["tau_mm"])
    try:
        return ExperimentConfig(
            subjects=tuple(subjects),
            strategies=tuple(strategies),
            backend=backend,
            output_dir=path_of(obj["output_dir"]),
            **kwargs,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

_RECORD_FIELDS = (
    "strategy",
    "count",
    "seed",
    "case_id",
    "dice",
    "nsd",
    "tau_mm",
    "prompts",
    "warnings",
    "error",
)


@dataclass(frozen=True)
class RunRecord:
    """Result of one grid cell; ``error`` is set (and metrics None) on failure."""

    strategy: str
    count: int
    seed: int
    case_id: str
    dice: Optional[float] = None
    nsd: Optional[float] = None
    tau_mm: float = 1.0
    prompts: Tuple[Tuple[int, int, int], ...] = ()
    warnings: Tuple[dict, ...] = ()
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, int, int, str]:
        return (self.strategy, self.count, self.seed, self.case_id)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "count": self.count,
            "seed": self.seed,
            "case_id": self.case_id,
            "dice": self.dice,
            "nsd": self.nsd,
            "tau_mm": self.tau_mm,
            "prompts": [list(v) for v in self.prompts],
            "warnings": [dict(w) for w in self.warnings],
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        return cls(
            strategy=obj["strategy"],
            count=int(obj["count"]),
            seed=int(obj["seed"]),
            case_id=obj["case_id"],
            dice=obj.get("dice"),
            nsd=obj.get("nsd"),
            tau_mm=float(obj.get("tau_mm", 1.0)),
            prompts=tuple(tuple(v) for v in obj.get("prompts", [])),
            warnings=tuple(obj.get("warnings", [])),
            error=obj.get("error"),
        )


def _record_line(record: RunRecord) -> str:
    return json.dumps(record.to_json(), separators=(",", ":"))


@dataclass(frozen=True)
class CellStats:
    """Aggregate of one (strategy, count) cell over all seeds and subjects."""

    strategy: str
    count: int
    dice_mean: float
    dice_std: float
    nsd_mean: float
    nsd_std: float
    dice_run_means: Tuple[float, ...]
    nsd_run_means: Tuple[float, ...]
    n_seeds: int
    n_failed: int


@dataclass(frozen=True)
class ResultTable:
    """All records of a grid plus their aggregates and strategy metadata."""

    records: Tuple[RunRecord, ...]
    cells: Dict[Tuple[str, int], CellStats]
    strategies: Dict[str, StrategySpec]
    tau_mm: float
    backend: Optional[dict] = None

    def cell(self, strategy: str, count: int) -> Optional[CellStats]:
        return self.cells.get((strategy, count))

    def counts_for(self, strategy: str) -> List[int]:
        return sorted(c for (s, c) in self.cells if s == strategy)


def _aggregate(records: Sequence[RunRecord]) -> Dict[Tuple[str, int], CellStats]:
    by_cell: Dict[Tuple[str, int], List[RunRecord]] = {}
    for r in records:
        by_cell.setdefault((r.strategy, r.count), []).append(r)
    cells = {}
    for (strategy, count), recs in sorted(by_cell.items()):
        ok = [r for r in recs if not r.failed]
        n_failed = len(recs) - len(ok)
        by_seed: Dict[int, List[RunRecord]] = {}
        for r in ok:
            by_seed.setdefault(r.seed, []).append(r)
        dice_run_means = []
        nsd_run_means = []
        for seed in sorted(by_seed):
            seed_recs = sorted(by_seed[seed], key=lambda r: r.case_id)
            dice_run_means.append(float(np.mean([r.dice for r in seed_recs])))
            nsd_run_means.append(float(np.mean([r.nsd for r in seed_recs])))
        if dice_run_means:
            dice_mean = float(np.mean(dice_run_means))
            dice_std = float(np.std(dice_run_means))  # population std over runs
            nsd_mean = float(np.mean(nsd_run_means))
            nsd_std = float(np.std(nsd_run_means))
        else:
            dice_mean = dice_std = nsd_mean = nsd_std = float("nan")
        cells[(strategy, count)] = CellStats(
            strategy=strategy,
            count=count,
            dice_mean=dice_mean,
            dice_std=dice_std,
            nsd_mean=nsd_mean,
            nsd_std=nsd_std,
            dice_run_means=tuple(dice_run_means),
            nsd_run_means=tuple(nsd_run_means),
            n_seeds=len(dice_run_means),
            n_failed=n_failed,
        )
    return cells


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _grid_cells(config: ExperimentConfig) -> List[Tuple[StrategySpec, int]]:
    cells = []
    for spec in config.strategies:
        if spec.has_explicit_count():
            cells.append((spec, spec.total_count()))
        else:
            for total in config.prompt_counts:
                if spec.is_split and total < spec.initial_count:
                    continue
                cells.append((spec.resolve_total(total), total))
    return cells


def _safe_name(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in text)


def _run_cell(
    spec: StrategySpec,
    count: int,
    seed: int,
    subject: Subject,
    subregions,
    gt,
    image,
    config: ExperimentConfig,
    work_root: Path,
) -> RunRecord:
    try:
        prompts = build_strategy_prompts(
            spec, subregions, config.resolved_fixed_seed(), seed
        )
        workdir = work_root / _safe_name(f"{spec.name}_{count}_{seed}_{subject.case_id}")
        pred = config.backend.segment(
            gt=gt,
            prompts=prompts,
            image=image,
            workdir=workdir,
            tau_mm=config.tau_mm,
            case_id=subject.case_id,
        )
        record = RunRecord(
            strategy=spec.name,
            count=count,
            seed=seed,
            case_id=subject.case_id,
            dice=metrics_mod.dice(pred, gt),
            nsd=metrics_mod.nsd(pred, gt, config.tau_mm),
            tau_mm=config.tau_mm,
            prompts=tuple(p.voxel for p in prompts.prompts),
            warnings=prompts.warnings,
        )
        if workdir.exists():
            shutil.rmtree(workdir, ignore_errors=True)
        return record
    except (ProtocolError, SamplingError, ValueError) as e:
        detail = f"{type(e).__name__}: {e}"
        stderr = getattr(e, "stderr", "")
        if stderr:
            detail += f" [stderr: {stderr.strip()[:500]}]"
        return RunRecord(
            strategy=spec.name,
            count=count,
            seed=seed,
            case_id=subject.case_id,
            tau_mm=config.tau_mm,
            error=detail,
        )


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """Run the full grid, persist results, and return the aggregate table.

    Existing records in ``output_dir/results.jsonl`` are reused, so rerunning
    over a populated output directory recomputes nothing. Backend failures
    mark their cell as failed without stopping the grid.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"

    subjects_data = []
    for s in config.subjects:
        try:
            gt = load_volume(s.gt_path)
        except Exception as e:
            raise ConfigError(f"subject {s.case_id}: cannot load gt: {e}") from e
        if not mask_array(gt, f"gt of {s.case_id}").any():
            raise ConfigError(f"subject {s.case_id}: ground truth mask is empty")
        image = None
        if s.image_path is not None:
            try:
                image = load_volume(s.image_path)
            except Exception as e:
                raise ConfigError(f"subject {s.case_id}: cannot load image: {e}") from e
        if isinstance(config.backend, ExternalProcessBackend) and image is None:
            raise ConfigError(
                f"subject {s.case_id}: external backends require an image path"
            )
        subjects_data.append((s, gt, image, decompose(gt)))

    existing: Dict[tuple, RunRecord] = {}
    if results_path.exists():
        for record in _read_records(results_path):
            existing[record.key] = record

    seeds = config.resolved_seeds()
    cells = _grid_cells(config)
    tasks = []
    for spec, count in cells:
        for seed in seeds:
            for subject, gt, image, subregions in subjects_data:
                if (spec.name, count, seed, subject.case_id) in existing:
                    continue
                tasks.append((spec, count, seed, subject, subregions, gt, image))

    work_root = out_dir / "work"
    new_records: List[RunRecord] = []
    if tasks:
        work_root.mkdir(exist_ok=True)
        if workers == 1:
            for t in tasks:
                new_records.append(_run_cell(*t, config=config, work_root=work_root))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_run_cell, *t, config=config, work_root=work_root)
                    for t in tasks
                ]
                new_records = [f.result() for f in futures]

    all_records = sorted(
        list(existing.values()) + new_records, key=lambda r: r.key
    )
    with open(results_path, "w") as f:
        for r in all_records:
            f.write(_record_line(r) + "\n")

    cells_stats = _aggregate(all_records)
    table = ResultTable(
        records=tuple(all_records),
        cells=cells_stats,
        strategies={s.name: s for s in config.strategies},
        tau_mm=config.tau_mm,
        backend=backend_to_json(config.backend),
    )
    _write_aggregate(table, out_dir / "aggregate.json")
    return table


def _read_records(path: Path) -> List[RunRecord]:
    records = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(RunRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise ValueError(f"{path}:{i + 1}: bad record: {e}") from e
    return records


def _write_aggregate(table: ResultTable, path: Path) -> None:
    obj = {
        "cells": [
            {
                "strategy": c.strategy,
                "count": c.count,
                "dice_mean": c.dice_mean,
                "dice_std": c.dice_std,
                "nsd_mean": c.nsd_mean,
                "nsd_std": c.nsd_std,
                "dice_run_means": list(c.dice_run_means),
                "nsd_run_means": list(c.nsd_run_means),
                "n_seeds": c.n_seeds,
                "n_failed": c.n_failed,
            }
            for _, c in sorted(table.cells.items())
        ],
        "strategies": [strategy_to_json(s) for s in table.strategies.values()],
        "tau_mm": table.tau_mm,
        "backend": table.backend,
        "conventions": {
            "aggregation": "per-seed mean over subjects, then mean and population std over seeds",
            "ttest": "paired over per-seed run means, sample std",
        },
    }
    path.write_text(json.dumps(obj, indent=2))


def load_results(path) -> ResultTable:
    """Rebuild a ResultTable from an output directory or one of its files."""
    p = Path(path)
    if p.is_dir():
        agg = p / "aggregate.json"
        res = p / "results.jsonl"
    elif p.name == "aggregate.json":
        agg, res = p, p.with_name("results.jsonl")
    else:
        agg, res = p.with_name("aggregate.json"), p
    records: Tuple[RunRecord, ...] = ()
    if res.exists():
        records = tuple(_read_records(res))
    if not agg.exists():
        if not records:
            raise ValueError(f"no results found at {path}")
        cells = _aggregate(records)
        return ResultTable(records=records, cells=cells, strategies={}, tau_mm=1.0)
    obj = json.loads(agg.read_text())
    strategies = {}
    for s in obj.get("strategies", []):
        spec = strategy_from_json(s)
        strategies[spec.name] = spec
    cells = {}
    for c in obj.get("cells", []):
        stats = CellStats(
            strategy=c["strategy"],
            count=int(c["count"]),
            dice_mean=c["dice_mean"],
            dice_std=c["dice_std"],
            nsd_mean=c["nsd_mean"],
            nsd_std=c["nsd_std"],
            dice_run_means=tuple(c.get("dice_run_means", [])),
            nsd_run_means=tuple(c.get("nsd_run_means", [])),
            n_seeds=int(c.get("n_seeds", 0)),
            n_failed=int(c.get("n_failed", 0)),
        )
        cells[(stats.strategy, stats.count)] = stats
    return ResultTable(
        records=records,
        cells=cells,
        strategies=strategies,
        tau_mm=float(obj.get("tau_mm", 1.0)),
        backend=obj.get("backend"),
    )


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test with positional pairing.

    Zero-variance differences return p=1.0 when the mean difference is zero,
    and p=0.0 with the degenerate flag set when it is not.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    df = n - 1
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(t=t, p=p, df=df)


def compare_strategies(
    table: ResultTable,
    a: str,
    b: str,
    count: int,
    pairing: str = "runs",
    count_b: Optional[int] = None,
) -> TTestResult:
    """Paired t-test between two strategies.

    ``pairing="runs"`` (default) pairs per-seed run means; ``"subjects"``
    pairs per-subject means over seeds. ``count_b`` lets the second strategy
    use a different prompt count (e.g. a 5-prompt strategy against the
    1-prompt baseline); pairing stays positional by seed / subject.
    """
    count_b = count if count_b is None else count_b
    if pairing == "runs":
        cell_a, cell_b = table.cell(a, count), table.cell(b, count_b)
        if cell_a is None or cell_b is None:
            raise ValueError(
                f"missing cell: ({a!r}, {count}) or ({b!r}, {count_b})"
            )
        return paired_ttest(cell_a.dice_run_means, cell_b.dice_run_means)
    if pairing == "subjects":
        means_a = _subject_means(table, a, count)
        means_b = _subject_means(table, b, count_b)
        common = sorted(set(means_a) & set(means_b))
        if len(common) < 2:
            raise ValueError("fewer than 2 common subjects with results")
        return paired_ttest([means_a[c] for c in common], [means_b[c] for c in common])
    raise ValueError(f"pairing must be 'runs' or 'subjects', got {pairing!r}")


def _subject_means(table: ResultTable, strategy: str, count: int) -> Dict[str, float]:
    by_subject: Dict[str, List[float]] = {}
    for r in table.records:
        if r.strategy == strategy and r.count == count and not r.failed:
            by_subject.setdefault(r.case_id, []).append(r.dice)
    return {c: float(np.mean(v)) for c, v in by_subject.items()}


def group_by_dice(
    records: Sequence[RunRecord],
    bin_edges: Optional[Sequence[float]] = None,
    reference: Optional[str] = None,
) -> dict:
    """Histogram of subjects over Dice bins, with per-method means inside each bin.

    Each subject's bin is determined by its mean Dice over the reference
    method's records (all methods when ``reference`` is None). Bins are
    half-open [e_i, e_{i+1}) except the last, which is closed. Default bins
    are width 0.1 over [0, 1].
    """
    if bin_edges is None:
        bin_edges = [i / 10 for i in range(11)]
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly ascending, got {bin_edges}")
    ok = [r for r in records if not r.failed]
    methods = sorted({r.strategy for r in ok})
    subjects = sorted({r.case_id for r in ok})

    def subject_mean(case_id: str, method: Optional[str]) -> Optional[float]:
        vals = [
            r.dice
            for r in ok
            if r.case_id == case_id and (method is None or r.strategy == method)
        ]
        return float(np.mean(vals)) if vals else None

    n_bins = len(edges) - 1
    bins = [
        {"lo": edges[i], "hi": edges[i + 1], "count": 0, "mean_dice": {}}
        for i in range(n_bins)
    ]
    assignments: Dict[str, int] = {}
    for case_id in subjects:
        v = subject_mean(case_id, reference)
        if v is None:
            continue
        idx = int(np.searchsorted(edges, v, side="right")) - 1
        idx = min(max(idx, 0), n_bins - 1)  # closed last bin
        assignments[case_id] = idx
        bins[idx]["count"] += 1
    for method in methods:
        per_bin: Dict[int, List[float]] = {}
        for case_id, idx in assignments.items():
            v = subject_mean(case_id, method)
            if v is not None:
                per_bin.setdefault(idx, []).append(v)
        for idx, vals in per_bin.items():
            bins[idx]["mean_dice"][method] = float(np.mean(vals))
    return {"edges": edges, "bins": bins}


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def format_mean_std(mean: float, std: float) -> str:
    """Three-decimal mean±std with leading zero suppressed, e.g. '.637±.014'."""

    def fmt(x: float) -> str:
        s = f"{x:.3f}"
        return s[1:] if s.startswith("0.") else s

    return f"{fmt(mean)}±{fmt(std)}"


_TABLE1_ROWS = (
    ("B",),
    ("M",),
    ("C",),
    ("B", "M"),
    ("B", "C"),
    ("M", "C"),
    ("B", "M", "C"),
)


def _region_key(spec: StrategySpec) -> Optional[frozenset]:
    if spec.kind == "random-whole":
        return frozenset(("B", "M", "C"))
    if spec.kind == "region-constrained":
        if spec.region == ("whole",):
            return frozenset(("B", "M", "C"))
        return frozenset(spec.region)
    return None


def _bold_best(rows: List[List[Optional[Tuple[float, str]]]]) -> List[List[str]]:
    """Per column, bold the cell(s) with the highest mean. Cells are (mean, text)."""
    if not rows:
        return []
    n_cols = len(rows[0])
    out = [[("—" if cell is None else cell[1]) for cell in row] for row in rows]
    for col in range(n_cols):
        means = [row[col][0] for row in rows if row[col] is not None]
        if not means:
            continue
        best = max(means)
        for r, row in enumerate(rows):
            if row[col] is not None and row[col][0] == best:
                out[r][col] = f"**{row[col][1]}**"
    return out


def _markdown_table(header: List[str], rows: List[List[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _csv_table(header: List[str], rows: List[List[str]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _table1(table: ResultTable, fmt: str) -> Tuple[str, List[str]]:
    warnings: List[str] = []
    by_key: Dict[frozenset, Tuple[str, StrategySpec]] = {}
    for name, spec in table.strategies.items():
        key = _region_key(spec)
        if key is not None and key not in by_key:
            by_key[key] = (name, spec)
    counts = sorted({c for (s, c) in table.cells if s in {v[0] for v in by_key.values()}})
    if not counts:
        warnings.append("no region-selection strategies in results")
    if fmt == "csv":
        header = ["region_B", "region_M", "region_C"]
        for metric in ("dice", "nsd"):
            for c in counts:
                header += [f"{metric}_{c}P_mean", f"{metric}_{c}P_std"]
        rows = []
        for sel in _TABLE1_ROWS:
            entry = by_key.get(frozenset(sel))
            if entry is None:
                continue
            name, _ = entry
            row = [str(int(t in sel)) for t in ("B", "M", "C")]
            for metric in ("dice", "nsd"):
                for c in counts:
                    cell = table.cell(name, c)
                    if cell is None:
                        warnings.append(f"missing cell ({name}, {c})")
                        row += ["", ""]
                    else:
                        row += [repr(getattr(cell, f"{metric}_mean")),
                                repr(getattr(cell, f"{metric}_std"))]
            rows.append(row)
        return _csv_table(header, rows), warnings

    header = ["B", "M", "C"]
    header += [f"Dice {c}P" for c in counts] + [f"NSD {c}P" for c in counts]
    presence_rows: List[List[str]] = []
    stat_rows: List[List[Optional[Tuple[float, str]]]] = []
    for sel in _TABLE1_ROWS:
        entry = by_key.get(frozenset(sel))
        if entry is None:
            continue
        name, _ = entry
        presence_rows.append(["x" if t in sel else " " for t in ("B", "M", "C")])
        cells_row: List[Optional[Tuple[float, str]]] = []
        for metric in ("dice", "nsd"):
            for c in counts:
                cell = table.cell(name, c)
                if cell is None:
                    warnings.append(f"missing cell ({name}, {c})")
                    cells_row.append(None)
                else:
                    mean = getattr(cell, f"{metric}_mean")
                    std = getattr(cell, f"{metric}_std")
                    cells_row.append((mean, format_mean_std(mean, std)))
        stat_rows.append(cells_row)
    bold = _bold_best(stat_rows)
    rows = [p + b for p, b in zip(presence_rows, bold)]
    return _markdown_table(header, rows), warnings


def _table2(table: ResultTable, fmt: str) -> Tuple[str, List[str]]:
    warnings: List[str] = []
    groups: Dict[tuple, List[Tuple[StrategySpec, int]]] = {}
    for name, spec in table.strategies.items():
        if spec.kind != "cumulative":
            continue
        for count in table.counts_for(name):
            key = (region_tag(spec.initial_region), region_tag(spec.cumulative_region))
            groups.setdefault(key, []).append((spec, count))
    if not groups:
        warnings.append("no cumulative strategies in results")
    pairs = sorted(
        {
            (spec.initial_count, count - spec.initial_count)
            for entries in groups.values()
            for spec, count in entries
        },
        key=lambda p: (p[0] + p[1], p[0]),
    )
    pair_label = {p: f"({p[0]}+{p[1]})P" for p in pairs}

    def row_cells(entries, metric):
        cells_row: List[Optional[Tuple[float, str]]] = []
        lookup = {(s.initial_count, c - s.initial_count): (s, c) for s, c in entries}
        for p in pairs:
            hit = lookup.get(p)
            if hit is None:
                cells_row.append(None)
                continue
            spec, count = hit
            cell = table.cell(spec.name, count)
            if cell is None:
                warnings.append(f"missing cell ({spec.name}, {count})")
                cells_row.append(None)
            else:
                mean = getattr(cell, f"{metric}_mean")
                std = getattr(cell, f"{metric}_std")
                cells_row.append((mean, format_mean_std(mean, std)))
        return cells_row

    keys = sorted(groups)
    if fmt == "csv":
        header = ["init_region", "cumulative_region"]
        for metric in ("dice", "nsd"):
            header += [f"{metric}_{pair_label[p]}_mean" for p in pairs]
        rows = []
        for key in keys:
            row = [key[0], key[1]]
            for metric in ("dice", "nsd"):
                for cell in row_cells(groups[key], metric):
                    row.append("" if cell is None else repr(cell[0]))
            rows.append(row)
        return _csv_table(header, rows), warnings

    header = ["Init", "Cumu"]
    header += [f"Dice {pair_label[p]}" for p in pairs]
    header += [f"NSD {pair_label[p]}" for p in pairs]
    presence = [[key[0], key[1]] for key in keys]
    stat_rows = [row_cells(groups[key], "dice") + row_cells(groups[key], "nsd") for key in keys]
    bold = _bold_best(stat_rows)
    rows = [p + b for p, b in zip(presence, bold)]
    return _markdown_table(header, rows), warnings


def _table3(table: ResultTable, fmt: str) -> Tuple[str, List[str]]:
    warnings: List[str] = []
    region_cols = ("B", "M", "C", "whole")
    rows_index: Dict[tuple, Dict[str, Tuple[str, int]]] = {}
    for name, spec in table.strategies.items():
        if spec.kind != "initial-varied":
            continue
        for count in table.counts_for(name):
            row_key = (region_tag(spec.initial_region), spec.initial_count,
                       count - spec.initial_count)
            col = region_tag(spec.cumulative_region)
            rows_index.setdefault(row_key, {})[col] = (name, count)
    if not rows_index:
        warnings.append("no initial-varied strategies in results")
    keys = sorted(rows_index)

    def cells_of(key) -> List[Optional[Tuple[float, str]]]:
        out = []
        for col in region_cols:
            hit = rows_index[key].get(col)
            if hit is None:
                out.append(None)
                continue
            cell = table.cell(*hit)
            if cell is None:
                warnings.append(f"missing cell {hit}")
                out.append(None)
            else:
                out.append((cell.dice_mean, format_mean_std(cell.dice_mean, cell.dice_std)))
        return out

    if fmt == "csv":
        header = ["init", "cumulative_count"] + [f"dice_{c}_mean" for c in region_cols]
        rows = []
        for key in keys:
            row = [f"{key[1]}({key[0]})", str(key[2])]
            for cell in cells_of(key):
                row.append("" if cell is None else repr(cell[0]))
            rows.append(row)
        return _csv_table(header, rows), warnings

    header = ["Init", "Cumu"] + [f"Dice {c}" for c in region_cols]
    presence = [[f"{key[1]}({key[0]})", f"{key[2]}P"] for key in keys]
    bold = _bold_best([cells_of(key) for key in keys])
    rows = [p + b for p, b in zip(presence, bold)]
    return _markdown_table(header, rows), warnings


_LAYOUTS = {"table1": _table1, "table2": _table2, "table3": _table3}


def render_table(table: ResultTable, layout: str, fmt: str = "markdown") -> str:
    """Render aggregates in one of the report layouts (table1/table2/table3).

    Markdown output bolds the best mean per column; CSV output carries raw
    numbers without styling. Missing cells render as an em dash.
    """
    if layout not in _LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}, expected one of {sorted(_LAYOUTS)}")
    if fmt not in ("markdown", "csv"):
        raise ValueError(f"unknown format {fmt!r}, expected markdown or csv")
    text, _warnings = _LAYOUTS[layout](table, fmt)
    return text


def render_table_with_warnings(table: ResultTable, layout: str, fmt: str = "markdown"):
    if layout not in _LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}, expected one of {sorted(_LAYOUTS)}")
    return _LAYOUTS[layout](table, fmt)
