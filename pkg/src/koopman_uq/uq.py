"""Monte Carlo and surrogate ensembles, moment series, KDE and comparison metrics."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import ks_2samp

from .artifacts import write_npz
from .dynamics import Trajectory, augment, simulate
from .errors import NumericalError, SimulationError
from .koopman import KoopmanModel, SurrogateTrajectory, eigen_powers, eigenfunctions_at
from .powergrid import ReducedNetwork
from .sampling import SampleSet

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 1e-3


@dataclass(frozen=True)
class Ensemble:
    qoi: str
    times: np.ndarray
    values: np.ndarray  # (n_samples, n_times), survivors only
    source: str
    wall_time: float = 0.0
    excluded: tuple[int, ...] = ()  # sample indices dropped for blow-ups

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def at_time(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 + 0.5 * self.dt:
            raise ValueError(f"time {t} outside the ensemble grid")
        return self.values[:, k]


@dataclass(frozen=True)
class MomentSeries:
    """Column-wise sample statistics.

    ``std`` uses n-1 normalization; ``skew`` is the biased g1; ``kurt`` is the
    raw (non-excess) g2 so a Gaussian gives 3. Where the ensemble is constant,
    ``skew`` is 0 and ``kurt`` is NaN with ``kurt_defined`` False.
    """

    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray
    kurt_defined: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "std", "skew", "kurt"])
            for row in zip(self.times, self.mean, self.std, self.skew, self.kurt):
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n: int

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "density"])
            for x, d in zip(self.grid, self.density):
                w.writerow([repr(float(x)), repr(float(d))])


def qoi_name(i: int, j: int) -> str:
    return f"delta_{i + 1}_minus_{j + 1}"


def qoi_relative_angle(traj: Trajectory | SurrogateTrajectory, i: int, j: int, n_g: int | None = None) -> np.ndarray:
    """Rotor angle of generator ``i`` relative to generator ``j`` (0-based) at every snapshot."""
    if n_g is None:
        n_g = traj.layout.n_g if isinstance(traj, Trajectory) else None
    states = np.asarray(traj.states)
    limit = n_g if n_g is not None else states.shape[1]
    for k in (i, j):
        if not 0 <= k < limit:
            raise IndexError(f"generator index {k} out of range [0, {limit})")
    return states[:, i] - states[:, j]


def _mc_chunk(args):
    net, x0_true, rows, horizon, dt_int, dt_snap, qoi, uncertain = args
    out = []
    for m in rows:
        try:
            tr = simulate(augment(x0_true, m), net, horizon, dt_int, dt_snap, uncertain)
            out.append(tr.states[:, qoi[0]] - tr.states[:, qoi[1]])
        except SimulationError as exc:
            out.append(exc.time)
    return out


def run_mc(net: ReducedNetwork, x0_true: np.ndarray, samples: SampleSet, horizon: float = 10.0,
           dt_int: float = 0.005, dt_snap: float = 0.01, qoi: tuple[int, int] = (1, 9),
           uncertain: Sequence[int] | None = None, workers: int = 1,
           max_failure_fraction: float = MAX_FAILURE_FRACTION) -> Ensemble:
    """One full RK4 integration per parameter sample.

    Samples whose integration blows up are excluded and listed in
    ``Ensemble.excluded``; more than ``max_failure_fraction`` of them is an error.
    """
    rows = np.asarray(samples.samples)
    t0 = time.perf_counter()
    if workers > 1 and len(rows) > 1:
        chunks = np.array_split(np.arange(len(rows)), min(workers * 4, len(rows)))
        args = [(net, x0_true, rows[c], horizon, dt_int, dt_snap, qoi, uncertain) for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_mc_chunk, args) for r in part]
    else:
        results = _mc_chunk((net, x0_true, rows, horizon, dt_int, dt_snap, qoi, uncertain))
    wall = time.perf_counter() - t0

    excluded = tuple(k for k, r in enumerate(results) if not isinstance(r, np.ndarray))
    for k in excluded:
        log.warning("MC sample %d blew up at t = %s s; excluded", k, results[k])
    _check_failures(len(excluded), len(rows), max_failure_fraction, "MC")
    kept = [r for r in results if isinstance(r, np.ndarray)]
    n_snap = int(round(horizon / dt_snap)) + 1
    values = np.vstack(kept) if kept else np.empty((0, n_snap))
    times = np.arange(n_snap) * dt_snap
    return Ensemble(qoi_name(*qoi), times, values, "mc", wall, excluded)


def _check_failures(n_bad: int, n: int, frac: float, what: str) -> None:
    if n_bad > frac * n:
        raise NumericalError(f"{what}: {n_bad} of {n} samples diverged (> {frac:.1%} allowed)")


def qoi_weights(model: KoopmanModel, qoi: tuple[int, int]) -> tuple[np.ndarray, float]:
    """Mode weights ``w`` and offset ``c`` with ``qoi_k = Re(phi . (w * mu**k)) + c``."""
    i, j = qoi
    d = model.dictionary
    w = model.R[i] * d.scale[i] - model.R[j] * d.scale[j]
    return w, float(d.shift[i] - d.shift[j])


def run_surrogate(model: KoopmanModel, x0_true: np.ndarray, samples: SampleSet, k_max: int,
                  qoi: tuple[int, int] = (1, 9), chunk: int = 2000,
                  max_failure_fraction: float = MAX_FAILURE_FRACTION) -> Ensemble:
    """Surrogate realization for every sample; no ODE integration.

    Each sample sets the pseudo-states of ``x_a0``; its eigenfunction values
    ``phi = L g(x_a0)`` are propagated by ``mu**k`` and projected on the QoI
    mode weights.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    rows = np.asarray(samples.samples)
    if rows.shape[1] != model.dictionary.n_m:
        raise ValueError(f"samples have {rows.shape[1]} parameters, model expects {model.dictionary.n_m}")
    t0 = time.perf_counter()
    w, c = qoi_weights(model, qoi)
    WV = (eigen_powers(model.mu, k_max) * w).T  # (n_d, k_max+1)
    out = np.empty((len(rows), k_max + 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(rows), chunk):
            X0 = augment(x0_true, rows[start:start + chunk])
            phi = eigenfunctions_at(model, X0)
            out[start:start + chunk] = (phi @ WV).real + c
    wall = time.perf_counter() - t0

    finite = np.all(np.isfinite(out), axis=1)
    excluded = tuple(int(k) for k in np.flatnonzero(~finite))
    _check_failures(len(excluded), len(rows), max_failure_fraction, "surrogate")
    times = np.arange(k_max + 1) * model.dt
    return Ensemble(qoi_name(*qoi), times, out[finite], "surrogate", wall, excluded)


def moments(e: Ensemble, max_order: int = 4) -> MomentSeries:
    """Mean, std, skewness and raw kurtosis at every time."""
    need = {1: 1, 2: 2, 3: 3, 4: 4}[max_order]
    n = e.n_samples
    if n < need:
        raise ValueError(f"moments up to order {max_order} need >= {need} samples, got {n}")
    v = e.values
    mean = v.mean(axis=0)
    dev = v - mean
    m2 = np.mean(dev**2, axis=0)
    std = np.sqrt(m2 * n / (n - 1)) if n > 1 else np.full(mean.shape, np.nan)
    tiny = m2 <= (1e-14 * np.maximum(np.abs(mean), 1.0)) ** 2
    safe = np.where(tiny, 1.0, m2)
    skew = np.where(tiny, 0.0, np.mean(dev**3, axis=0) / safe**1.5)
    kurt = np.where(tiny, np.nan, np.mean(dev**4, axis=0) / safe**2)
    if max_order < 3:
        skew = np.full(mean.shape, np.nan)
    if max_order < 4:
        kurt = np.full(mean.shape, np.nan)
    return MomentSeries(e.times, mean, np.where(tiny, 0.0, std), skew, kurt, ~tiny & (max_order >= 4))


def silverman_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    std = values.std(ddof=1)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * len(values) ** (-0.2)


def kde(values, bandwidth: float | None = None, n_grid: int = 512) -> DensityEstimate:
    """Gaussian-kernel density on a uniform grid over ``[min - 5h, max + 5h]``."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("KDE needs at least two distinct values")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    lo, hi = x.min() - 5 * h, x.max() + 5 * h
    # resolve the kernel: at least 8 grid points per bandwidth
    n_grid = max(n_grid, int(np.ceil((hi - lo) / (h / 8))) + 1)
    grid = np.linspace(lo, hi, n_grid)
    dens = np.zeros_like(grid)
    for start in range(0, x.size, 4096):
        u = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return DensityEstimate(grid, dens, h, x.size)


def ks_statistic(a, b) -> float:
    return float(ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def compare(bench: Ensemble, test: Ensemble, window: tuple[float, float] = (0.0, 5.0),
            ks_times: Sequence[float] = (), training_time: float = 0.0) -> dict:
    """Agreement of ``test`` against ``bench`` over ``window`` (seconds, inclusive).

    ``std_rel_err`` is the relative 2-norm error of the std series; the peak-
    normalized sup-norm variant is reported as ``std_rel_err_sup``.
    """
    if abs(bench.dt - test.dt) > 1e-9:
        raise ValueError(f"ensembles use different time steps ({bench.dt} vs {test.dt})")
    n = min(len(bench.times), len(test.times))
    t = bench.times[:n]
    if np.max(np.abs(t - test.times[:n])) > 1e-9:
        raise ValueError("ensembles do not share a time grid")
    sel = (t >= window[0] - 1e-9) & (t <= window[1] + 1e-9)
    if not sel.any():
        raise ValueError(f"window {window} selects no snapshots")
    mb = moments(bench, 2 if bench.n_samples < 4 else 4)
    mt = moments(test, 2 if test.n_samples < 4 else 4)
    dmean = np.abs(mt.mean[:n] - mb.mean[:n])[sel]
    sb, st = mb.std[:n][sel], mt.std[:n][sel]
    norm_b = np.linalg.norm(sb)
    report = {
        "qoi": bench.qoi,
        "window": [float(window[0]), float(window[1])],
        "n_bench": bench.n_samples,
        "n_test": test.n_samples,
        "mean_max_abs_err": float(dmean.max()),
        "mean_mean_abs_err": float(dmean.mean()),
        "std_rel_err": float(np.linalg.norm(st - sb) / norm_b) if norm_b > 0 else float(np.linalg.norm(st)),
        "std_rel_err_sup": float(np.abs(st - sb).max() / sb.max()) if sb.max() > 0 else float(st.max()),
        "ks": {f"{tk:g}": ks_statistic(bench.at_time(tk), test.at_time(tk)) for tk in ks_times},
        "wall_time_bench": bench.wall_time,
        "wall_time_test": test.wall_time,
        "training_time_test": training_time,
    }
    total = test.wall_time + training_time
    report["speedup"] = bench.wall_time / total if total > 0 else float("inf")
    return report


def save_ensemble(e: Ensemble, path) -> None:
    """Binary ensemble archive. Wall time is kept out so reruns are byte-identical."""
    write_npz(path, times=e.times, values=e.values, excluded=np.asarray(e.excluded, dtype=np.int64),
              meta=np.array([e.qoi, e.source]))


def load_ensemble(path, wall_time: float = 0.0) -> Ensemble:
    with np.load(path, allow_pickle=False) as z:
        qoi, source = (str(s) for s in z["meta"])
        return Ensemble(qoi, z["times"], z["values"], source, wall_time,
                        tuple(int(k) for k in z["excluded"]))
