"""Seeded parameter sampling: Latin hypercube designs and i.i.d. draws."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import NumericalError


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"Gaussian std must be > 0, got {self.std}")

    def ppf(self, u):
        return self.mean + self.std * ndtri(u)

    def draw(self, rng: np.random.Generator, size):
        return rng.normal(self.mean, self.std, size)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"Uniform needs low < high, got [{self.low}, {self.high}]")

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u)

    def draw(self, rng: np.random.Generator, size):
        return rng.uniform(self.low, self.high, size)


@dataclass(frozen=True)
class ParamDistribution:
    """Independent marginals, one per uncertain parameter."""

    marginals: tuple
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.marginals:
            raise ValueError("at least one marginal required")
        if self.names and len(self.names) != len(self.marginals):
            raise ValueError("names and marginals differ in length")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"H_{k + 1}" for k in range(len(self.marginals))))

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @classmethod
    def relative(cls, nominal: Sequence[float], spread: float = 0.10, kind: str = "gaussian",
                 names: Sequence[str] = ()) -> "ParamDistribution":
        """Marginals centred on ``nominal``.

        ``gaussian``: std = spread * nominal. ``uniform``: support
        [(1 - spread) * nominal, (1 + spread) * nominal].
        """
        nominal = np.asarray(nominal, dtype=float)
        if kind == "gaussian":
            marg = tuple(Gaussian(float(m), float(spread * m)) for m in nominal)
        elif kind == "uniform":
            marg = tuple(Uniform(float((1 - spread) * m), float((1 + spread) * m)) for m in nominal)
        else:
            raise ValueError(f"unknown distribution kind {kind!r}")
        return cls(marg, tuple(names))


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray
    method: str
    seed: int | None
    names: tuple[str, ...] = ()
    redraws: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be a non-empty 2-D array")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"H_{k + 1}" for k in range(s.shape[1])))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            for row in self.samples:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, method: str = "file", seed: int | None = None) -> "SampleSet":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            names = tuple(h.strip() for h in next(reader))
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(np.array(rows).reshape(-1, len(names)), method, seed, names)


def lhs_unit(n: int, d: int, seed=None) -> np.ndarray:
    """Latin hypercube design on [0, 1)^d.

    Each column holds exactly one point in every stratum [k/n, (k+1)/n), placed
    uniformly within it; columns use independent stratum permutations.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return _lhs(np.random.default_rng(seed), n, d)[1]


def _lhs(rng: np.random.Generator, n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratum index of every entry and the jittered unit-cube points."""
    strata = np.argsort(rng.random((d, n)), axis=1).T
    return strata, (strata + rng.random((n, d))) / n


def draw_params(dist: ParamDistribution, n: int, method: str = "iid", seed: int | None = None,
                max_rounds: int = 100) -> SampleSet:
    """Draw ``n`` parameter vectors from ``dist``.

    LHS points are mapped through each marginal's inverse CDF. Non-positive
    values are redrawn (within the same stratum for LHS) until every sample is
    positive; the total number of redrawn entries is reported in ``redraws``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = dist.dim
    if method == "lhs":
        strata, u = _lhs(rng, n, d)
        out = np.column_stack([m.ppf(u[:, k]) for k, m in enumerate(dist.marginals)])
    elif method == "iid":
        out = np.column_stack([m.draw(rng, n) for m in dist.marginals])
    else:
        raise ValueError(f"unknown sampling method {method!r}")

    redraws = 0
    for _ in range(max_rounds):
        bad = np.argwhere(out <= 0)
        if bad.size == 0:
            break
        redraws += len(bad)
        for i, k in bad:
            marg = dist.marginals[k]
            if method == "lhs":
                out[i, k] = marg.ppf((strata[i, k] + rng.random()) / n)
            else:
                out[i, k] = marg.draw(rng, None)
    else:
        raise NumericalError(f"positivity redraw budget exhausted after {max_rounds} rounds")
    return SampleSet(out, method, seed, dist.names, redraws)
