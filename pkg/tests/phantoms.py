"""Synthetic phantom subjects for desk-scale experiments."""

from pathlib import Path

import numpy as np

from promptbench import Subject, Volume3, make_mask, save_volume


def make_phantom(seed: int, dims=(28, 28, 28), spacing=(1.0, 1.0, 1.0)) -> Volume3:
    """Random union of 1-2 ellipsoids, thick enough to have a center region."""
    rng = np.random.default_rng(seed)
    x, y, z = np.indices(dims, dtype=np.float64)
    mask = np.zeros(dims, dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        semi = rng.uniform(4.5, 8.0, size=3)
        lo = semi + 1.0
        hi = np.asarray(dims) - semi - 1.0
        center = rng.uniform(lo, hi)
        mask |= (
            ((x - center[0]) / semi[0]) ** 2
            + ((y - center[1]) / semi[1]) ** 2
            + ((z - center[2]) / semi[2]) ** 2
        ) <= 1.0
    return make_mask(mask, spacing=spacing)


def phantom_subjects(n: int, directory, dims=(28, 28, 28), fmt: str = "nii"):
    """Write n phantom masks to ``directory`` and return Subject entries."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".nii" if fmt == "nii" else ".raw"
    subjects = []
    for i in range(n):
        path = directory / f"phantom_{i:03d}{ext}"
        save_volume(make_phantom(i, dims=dims), path)
        subjects.append(Subject(case_id=f"phantom_{i:03d}", gt_path=path))
    return subjects
