"""Seed-deterministic, region-constrained point-prompt sampling.

All randomness flows through one pinned construction so that any two runs
(or any two implementations) given the same seed produce the same prompts:

1. Foreground voxels are enumerated in lexicographic (z, y, x) ascending
   order, i.e. x fastest, identical to the canonical flat layout.
2. A forward Fisher-Yates shuffle permutes them: for i = 0 .. n-2,
   draw j uniformly from [i, n), swap positions i and j. After step i,
   position i is final, which makes any n-prefix of the permutation
   independent of how many elements are eventually drawn.
3. The shuffle consumes a splitmix64 stream. Bounded draws use rejection
   from the top of the 64-bit range: with limit = (2^64 // bound) * bound,
   values >= limit are discarded and the rest reduced modulo bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .subregion import SubRegions, region_tag, union_region
from .volume import Mask, mask_array

__all__ = [
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
    "strategy_to_json",
    "strategy_from_json",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

Voxel = Tuple[int, int, int]


class SamplingError(ValueError):
    """No voxels available to sample (empty source mask)."""


class SplitMix64:
    """The splitmix64 generator; identical sequences on every platform."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_below(self, bound: int) -> int:
        """Unbiased draw from [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = ((1 << 64) // bound) * bound
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound


def derive_seeds(master_seed: int, n: int) -> Tuple[int, ...]:
    """First ``n`` outputs of a splitmix64 stream, used as run seeds."""
    rng = SplitMix64(master_seed)
    return tuple(rng.next_u64() for _ in range(n))


@dataclass(frozen=True)
class Prompt:
    """A labeled voxel coordinate handed to a segmenter."""

    voxel: Voxel
    label: str = "pos"  # "pos" | "neg"
    role: str = "initial"  # "initial" | "cumulative"
    region: str = "whole"  # source region tag, post-fallback

    def __post_init__(self):
        if self.label not in ("pos", "neg"):
            raise ValueError(f"label must be 'pos' or 'neg', got {self.label!r}")
        if self.role not in ("initial", "cumulative"):
            raise ValueError(f"role must be 'initial' or 'cumulative', got {self.role!r}")
        object.__setattr__(self, "voxel", tuple(int(v) for v in self.voxel))


@dataclass(frozen=True)
class PromptSet:
    """Prompts in generation order plus the seed and warnings that made them."""

    prompts: Tuple[Prompt, ...]
    seed: int
    warnings: Tuple[dict, ...] = ()

    def __post_init__(self):
        voxels = [p.voxel for p in self.prompts]
        if len(set(voxels)) != len(voxels):
            raise ValueError("duplicate voxels in prompt set")

    def voxels(self) -> List[Voxel]:
        return [p.voxel for p in self.prompts]

    def positives(self) -> List[Prompt]:
        return [p for p in self.prompts if p.label == "pos"]

    def __len__(self) -> int:
        return len(self.prompts)


def prompt_set_to_json(ps: PromptSet) -> dict:
    return {
        "seed": int(ps.seed),
        "prompts": [
            {
                "voxel": list(p.voxel),
                "label": p.label,
                "role": p.role,
                "region": p.region,
            }
            for p in ps.prompts
        ],
        "warnings": [dict(w) for w in ps.warnings],
    }


def prompt_set_from_json(obj: dict) -> PromptSet:
    prompts = tuple(
        Prompt(
            voxel=tuple(p["voxel"]),
            label=p.get("label", "pos"),
            role=p.get("role", "initial"),
            region=p.get("region", "whole"),
        )
        for p in obj.get("prompts", [])
    )
    return PromptSet(
        prompts=prompts,
        seed=int(obj.get("seed", 0)),
        warnings=tuple(obj.get("warnings", [])),
    )


# ---------------------------------------------------------------------------
# Core sampler
# ---------------------------------------------------------------------------


def _foreground_coords(mask: Mask) -> np.ndarray:
    """(N, 3) voxel coordinates in canonical x-fastest enumeration order."""
    fg = mask_array(mask)
    nx, ny, _ = fg.shape
    flat = np.flatnonzero(fg.ravel(order="F"))
    x = flat % nx
    y = (flat // nx) % ny
    z = flat // (nx * ny)
    return np.stack([x, y, z], axis=1)


def _shuffled_prefix(coords: np.ndarray, seed: int, n: Optional[int]) -> np.ndarray:
    count = len(coords)
    if count == 0:
        return coords
    take = count if n is None else min(n, count)
    order = np.arange(count)
    rng = SplitMix64(seed)
    for i in range(min(take, count - 1)):
        j = i + rng.next_below(count - i)
        if i != j:
            order[i], order[j] = order[j], order[i]
    return coords[order[:take]]


def region_permutation(region: Mask, seed: int) -> List[Voxel]:
    """Seed-determined permutation of all foreground voxels of ``region``."""
    coords = _shuffled_prefix(_foreground_coords(region), seed, None)
    return [tuple(int(v) for v in c) for c in coords]


def sample_prompts(
    region: Mask,
    n: int,
    seed: int,
    exclude: Iterable[Voxel] = (),
    *,
    label: str = "pos",
    role: str = "initial",
    region_name: str = "whole",
) -> PromptSet:
    """First ``n`` voxels of the seeded permutation of ``region`` minus ``exclude``.

    Sampling n is always a prefix of sampling m >= n with the same seed.
    Requesting more voxels than available returns all of them plus a
    clamped-count warning.
    """
    if n < 0:
        raise ValueError(f"prompt count must be >= 0, got {n}")
    coords = _foreground_coords(region)
    excluded = frozenset(tuple(int(v) for v in e) for e in exclude)
    if excluded and len(coords):
        keep = np.array([tuple(c) not in excluded for c in coords], dtype=bool)
        coords = coords[keep]
    warnings: List[dict] = []
    if n > len(coords):
        warnings.append(
            {
                "kind": "clamped-count",
                "requested": int(n),
                "available": int(len(coords)),
                "region": region_name,
            }
        )
    chosen = _shuffled_prefix(coords, seed, n)
    prompts = tuple(
        Prompt(voxel=tuple(int(v) for v in c), label=label, role=role, region=region_name)
        for c in chosen
    )
    return PromptSet(prompts=prompts, seed=seed, warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Selection strategies
# ---------------------------------------------------------------------------

KINDS = ("random-whole", "region-constrained", "cumulative", "initial-varied")
_FALLBACK_CHAIN = ("C", "M", "B", "whole")


def _check_selector(sel: Tuple[str, ...], what: str) -> Tuple[str, ...]:
    sel = tuple(sel)
    if not sel:
        raise ValueError(f"{what}: empty region selector")
    if "whole" in sel and sel != ("whole",):
        raise ValueError(f"{what}: 'whole' cannot be combined with sub-regions")
    region_tag(sel)  # validates tags
    return sel


@dataclass(frozen=True)
class StrategySpec:
    """Declarative description of a prompt-selection strategy.

    For the two simple kinds (random-whole, region-constrained) all prompts
    are drawn with the per-run seed. For the two split kinds, one phase uses
    the fixed seed and the other the per-run seed:

    * cumulative: initial prompts fixed across runs, cumulative vary.
    * initial-varied: initial prompts vary, cumulative fixed.

    A count of ``None`` is resolved later against the experiment's prompt
    count grid (see :meth:`resolve_total`).
    """

    kind: str
    name: str = ""
    region: Tuple[str, ...] = ()  # region-constrained only
    count: Optional[int] = None  # simple kinds
    initial_region: Tuple[str, ...] = ("whole",)
    initial_count: int = 1
    cumulative_region: Tuple[str, ...] = ("C",)
    cumulative_count: Optional[int] = None  # split kinds

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        object.__setattr__(self, "region", tuple(self.region))
        object.__setattr__(self, "initial_region", tuple(self.initial_region))
        object.__setattr__(self, "cumulative_region", tuple(self.cumulative_region))
        if self.kind == "region-constrained":
            _check_selector(self.region, "region")
        if self.kind in ("cumulative", "initial-varied"):
            _check_selector(self.initial_region, "initial_region")
            _check_selector(self.cumulative_region, "cumulative_region")
            if self.initial_count < 0:
                raise ValueError("initial_count must be >= 0")
            if self.cumulative_count is not None and self.cumulative_count < 0:
                raise ValueError("cumulative_count must be >= 0")
            if self.cumulative_count is not None and self.total_count() < 1:
                raise ValueError("total prompt count must be >= 1")
        else:
            if self.count is not None and self.count < 1:
                raise ValueError("count must be >= 1")

    @property
    def is_split(self) -> bool:
        return self.kind in ("cumulative", "initial-varied")

    @property
    def initial_seed_role(self) -> str:
        return "fixed" if self.kind == "cumulative" else "per-run"

    @property
    def cumulative_seed_role(self) -> str:
        return "per-run" if self.kind == "cumulative" else "fixed"

    def has_explicit_count(self) -> bool:
        if self.is_split:
            return self.cumulative_count is not None
        return self.count is not None

    def total_count(self) -> int:
        if self.is_split:
            if self.cumulative_count is None:
                raise ValueError(f"strategy {self.name!r} has an unresolved count")
            return self.initial_count + self.cumulative_count
        if self.count is None:
            raise ValueError(f"strategy {self.name!r} has an unresolved count")
        return self.count

    def resolve_total(self, total: int) -> "StrategySpec":
        """Concrete spec for a grid cell of ``total`` prompts."""
        if total < 1:
            raise ValueError(f"total prompt count must be >= 1, got {total}")
        if self.is_split:
            if total < self.initial_count:
                raise ValueError(
                    f"strategy {self.name!r}: total {total} < initial_count {self.initial_count}"
                )
            return replace(self, cumulative_count=total - self.initial_count)
        return replace(self, count=total)


def strategy_to_json(spec: StrategySpec) -> dict:
    obj = {"kind": spec.kind, "name": spec.name}
    if spec.kind == "region-constrained":
        obj["region"] = list(spec.region)
    if spec.count is not None:
        obj["count"] = spec.count
    if spec.is_split:
        obj["initial_region"] = list(spec.initial_region)
        obj["initial_count"] = spec.initial_count
        obj["cumulative_region"] = list(spec.cumulative_region)
        if spec.cumulative_count is not None:
            obj["cumulative_count"] = spec.cumulative_count
    return obj


def strategy_from_json(obj: dict) -> StrategySpec:
    kwargs = dict(
        kind=obj.get("kind", ""),
        name=obj.get("name", ""),
    )
    if "region" in obj:
        kwargs["region"] = tuple(obj["region"])
    if "count" in obj:
        kwargs["count"] = int(obj["count"])
    if "initial_region" in obj:
        kwargs["initial_region"] = tuple(obj["initial_region"])
    if "initial_count" in obj:
        kwargs["initial_count"] = int(obj["initial_count"])
    if "cumulative_region" in obj:
        kwargs["cumulative_region"] = tuple(obj["cumulative_region"])
    if "cumulative_count" in obj:
        kwargs["cumulative_count"] = int(obj["cumulative_count"])
    return StrategySpec(**kwargs)


def _resolve_region(
    selector: Tuple[str, ...], subregions: SubRegions
) -> Tuple[Mask, str, List[dict]]:
    """Region mask for a selector, walking the C->M->B->whole fallback chain."""
    wanted = region_tag(selector)
    mask = union_region(subregions, selector)
    if mask.data.any():
        return mask, wanted, []
    for tag in _FALLBACK_CHAIN:
        if tag == wanted:
            continue
        candidate = (
            subregions.source if tag == "whole" else subregions.by_tag(tag)
        )
        if candidate.data.any():
            warning = {"kind": "empty-region-fallback", "requested": wanted, "used": tag}
            return candidate, tag, [warning]
    raise SamplingError("empty source mask: no voxels available in any sub-region")


def build_strategy_prompts(
    spec: StrategySpec,
    subregions: SubRegions,
    fixed_seed: int,
    run_seed: int,
) -> PromptSet:
    """Generate the prompt set a strategy produces for one run.

    The returned set's ``seed`` is the per-run seed. Initial prompts precede
    cumulative ones, and cumulative sampling excludes the voxels already
    taken, so a set never contains duplicates even when regions overlap.
    """
    if spec.kind == "random-whole":
        mask, tag, warns = _resolve_region(("whole",), subregions)
        ps = sample_prompts(mask, spec.total_count(), run_seed, region_name=tag)
        return replace(ps, warnings=tuple(warns) + ps.warnings)

    if spec.kind == "region-constrained":
        mask, tag, warns = _resolve_region(spec.region, subregions)
        ps = sample_prompts(mask, spec.total_count(), run_seed, region_name=tag)
        return replace(ps, warnings=tuple(warns) + ps.warnings)

    # split kinds: cumulative / initial-varied
    if spec.kind == "cumulative":
        initial_seed, cumulative_seed = fixed_seed, run_seed
    else:
        initial_seed, cumulative_seed = run_seed, fixed_seed

    warnings: List[dict] = []
    init_mask, init_tag, warns = _resolve_region(spec.initial_region, subregions)
    warnings.extend(warns)
    initial = sample_prompts(
        init_mask, spec.initial_count, initial_seed, role="initial", region_name=init_tag
    )
    warnings.extend(initial.warnings)

    cum_mask, cum_tag, warns = _resolve_region(spec.cumulative_region, subregions)
    warnings.extend(warns)
    cumulative = sample_prompts(
        cum_mask,
        spec.total_count() - spec.initial_count,
        cumulative_seed,
        exclude=initial.voxels(),
        role="cumulative",
        region_name=cum_tag,
    )
    warnings.extend(cumulative.warnings)

    return PromptSet(
        prompts=initial.prompts + cumulative.prompts,
        seed=run_seed,
        warnings=tuple(warnings),
    )
