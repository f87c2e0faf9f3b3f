"""Synthetic scenario generation by truncated-normal sampling.

Each of the three scenario variables (speed, spacing, relative speed) is drawn
independently from a truncated normal distribution. Samples come from exact
rejection sampling against the parent normal, which keeps the conditional
distribution exact at the cost of a modest acceptance rate (~84% for the
default spacing parameters, higher for the others).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TruncNormSpec:
    """Parent normal (mean, std) conditioned on [min, max]."""

    mean: float
    std: float
    min: float
    max: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean}")
        if not self.std > 0:
            raise ValueError(f"std must be > 0, got {self.std}")
        if not self.min < self.max:
            raise ValueError(f"need min < max, got [{self.min}, {self.max}]")


# Default per-variable sampling distributions (SI units).
SPEED_SPEC = TruncNormSpec(mean=15.0, std=15.0, min=0.0, max=40.0)
SPACING_SPEC = TruncNormSpec(mean=15.0, std=15.0, min=0.1, max=100.0)
REL_SPEED_SPEC = TruncNormSpec(mean=0.0, std=2.0, min=-5.0, max=5.0)
DEFAULT_SPECS = {"v": SPEED_SPEC, "s": SPACING_SPEC, "dv": REL_SPEED_SPEC}


def sample_trunc_normal(spec: TruncNormSpec, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw exact truncated-normal samples by rejection from the parent normal."""
    out = np.empty(size, dtype=float)
    filled = 0
    while filled < size:
        draw = rng.normal(spec.mean, spec.std, size=size - filled)
        keep = draw[(draw >= spec.min) & (draw <= spec.max)]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


@dataclass
class ScenarioSet:
    """A reproducible batch of sampled car-following scenarios.

    `states` is an (N, 3) array of rows (v, s, dv); `seed` and `specs` are
    retained so the set can be regenerated or audited.
    """

    seed: int
    specs: dict[str, TruncNormSpec]
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("empty scenario set")

    def __len__(self) -> int:
        return len(self.states)

    def to_csv(self, path) -> None:
        """Write `id,v,s,dv` rows with 6 decimal places."""
        with open(path, "w") as fh:
            fh.write("id,v,s,dv\n")
            for i, (v, s, dv) in enumerate(self.states):
                fh.write(f"{i},{v:.6f},{s:.6f},{dv:.6f}\n")

    @classmethod
    def from_csv(cls, path, seed: int = -1, specs: dict | None = None) -> "ScenarioSet":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(seed=seed, specs=specs or dict(DEFAULT_SPECS), states=rows[:, 1:4])


def generate_scenarios(specs: dict[str, TruncNormSpec] | None = None,
                       count: int = 10000, seed: int = 0) -> ScenarioSet:
    """Sample `count` i.i.d. (v, s, dv) scenarios, reproducibly for a seed.

    Variables are sampled independently; extreme-but-valid combinations (tiny
    spacing at a high closing speed) are deliberately retained. Parallel
    generation should derive per-worker seeds as seed + worker index.
    """
    if count <= 0:
        raise ValueError(f"count must be > 0, got {count}")
    specs = dict(specs or DEFAULT_SPECS)
    rng = np.random.default_rng(seed)
    cols = [sample_trunc_normal(specs[k], rng, size=count) for k in ("v", "s", "dv")]
    return ScenarioSet(seed=seed, specs=specs, states=np.stack(cols, axis=1))
