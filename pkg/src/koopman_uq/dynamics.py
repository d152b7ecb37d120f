"""Augmented classical swing-equation model and fixed-step RK4 trajectories.

State layout is ``[delta (n_g); omega (n_g); m (n_m)]`` where ``m`` holds the
inertia constants of the uncertain generators as pseudo-states with zero
time derivative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SimulationError
from .powergrid import ReducedNetwork


@dataclass(frozen=True)
class StateLayout:
    n_g: int
    uncertain: tuple[int, ...]  # generator index of each pseudo-state

    @property
    def n_m(self) -> int:
        return len(self.uncertain)

    @property
    def n_a(self) -> int:
        return 2 * self.n_g + self.n_m

    @property
    def delta(self) -> slice:
        return slice(0, self.n_g)

    @property
    def omega(self) -> slice:
        return slice(self.n_g, 2 * self.n_g)

    @property
    def m(self) -> slice:
        return slice(2 * self.n_g, self.n_a)

    def column_names(self) -> list[str]:
        return ([f"delta_{i + 1}" for i in range(self.n_g)]
                + [f"omega_{i + 1}" for i in range(self.n_g)]
                + [f"m_{k + 1}" for k in range(self.n_m)])

    @classmethod
    def for_network(cls, net: ReducedNetwork, uncertain: Sequence[int] | None = None) -> "StateLayout":
        if uncertain is None:
            uncertain = range(net.n_gen)
        uncertain = tuple(int(i) for i in uncertain)
        if any(not 0 <= i < net.n_gen for i in uncertain):
            raise IndexError(f"uncertain generator index out of range: {uncertain}")
        if len(set(uncertain)) != len(uncertain):
            raise ValueError("duplicate uncertain generator index")
        return cls(net.n_gen, uncertain)


@dataclass(frozen=True)
class AugmentedState:
    delta: np.ndarray
    omega: np.ndarray
    m: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega, self.m]).astype(float)

    @classmethod
    def from_vector(cls, x: np.ndarray, layout: StateLayout) -> "AugmentedState":
        x = np.asarray(x, dtype=float)
        return cls(x[layout.delta].copy(), x[layout.omega].copy(), x[layout.m].copy())


def equilibrium_state(net: ReducedNetwork, uncertain: Sequence[int] | None = None) -> np.ndarray:
    """Pre-disturbance operating point with nominal inertias as pseudo-states."""
    layout = StateLayout.for_network(net, uncertain)
    return np.concatenate([net.delta0, np.zeros(net.n_gen), net.H[list(layout.uncertain)]])


def augment(x_true: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Concatenate a true-state vector with pseudo-state values (broadcasts over rows of ``m``)."""
    m = np.asarray(m, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if m.ndim == 1:
        return np.concatenate([x_true, m])
    return np.hstack([np.broadcast_to(x_true, (m.shape[0], x_true.size)), m])


def swing_rhs(x: np.ndarray, net: ReducedNetwork, uncertain: Sequence[int] | None = None,
              layout: StateLayout | None = None) -> np.ndarray:
    """Time derivative of the augmented state.

    ``x`` may carry leading batch axes. The pseudo-state block of the result is
    exactly zero.
    """
    layout = layout or StateLayout.for_network(net, uncertain)
    x = np.asarray(x, dtype=float)
    delta = x[..., layout.delta]
    omega = x[..., layout.omega]
    H = np.broadcast_to(net.H, delta.shape).copy()
    H[..., list(layout.uncertain)] = x[..., layout.m]
    P_e = net.electrical_power(delta)
    domega = net.omega_s / (2.0 * H) * (net.P_m - P_e - net.D / net.omega_s * omega)
    out = np.zeros_like(x)
    out[..., layout.delta] = omega
    out[..., layout.omega] = domega
    if not np.all(np.isfinite(domega)):
        bad = np.argwhere(~np.isfinite(domega))[0]
        raise SimulationError(f"non-finite speed derivative at generator {int(bad[-1]) + 1}",
                              index=int(bad[-1]))
    return out


def _single_state_rhs(net: ReducedNetwork, layout: StateLayout):
    """Same equations as :func:`swing_rhs` for one 1-D state, with constants pre-bound."""
    n = layout.n_g
    unc = np.array(layout.uncertain, dtype=int)
    E, Yt, P_m = net.E, np.ascontiguousarray(net.Y_red.T), net.P_m
    H_nom, damp, ws = net.H.copy(), net.D / net.omega_s, net.omega_s

    def f(y):
        V = E * np.exp(1j * y[:n])
        P_e = (V * np.conj(V @ Yt)).real
        H = H_nom.copy()
        H[unc] = y[2 * n:]
        out = np.zeros_like(y)
        out[:n] = y[n:2 * n]
        out[n:2 * n] = ws / (2.0 * H) * (P_m - P_e - damp * y[n:2 * n])
        return out

    return f


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snap, n_a)
    layout: StateLayout

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def delta(self) -> np.ndarray:
        return self.states[:, self.layout.delta]

    def to_csv(self, path) -> None:
        write_states_csv(path, self.times, self.states, self.layout)

    @classmethod
    def from_csv(cls, path, n_g: int, uncertain: Sequence[int] | None = None) -> "Trajectory":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = np.array([[float(v) for v in row] for row in reader])
        n_m = len(header) - 1 - 2 * n_g
        layout = StateLayout(n_g, tuple(uncertain) if uncertain is not None else tuple(range(n_m)))
        if header != ["t"] + layout.column_names():
            raise ValueError(f"{path}: unexpected header {header}")
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, 0], rows[:, 1:], layout)


def write_states_csv(path, times, states, layout: StateLayout) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + layout.column_names())
        for t, row in zip(times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _step_count(total: float, step: float, what: str) -> int:
    n = round(total / step)
    if n < 0 or not math.isclose(n * step, total, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"{what} must be an integer multiple of {step}")
    return int(n)


def simulate(x0: np.ndarray, net: ReducedNetwork, horizon: float = 10.0, dt_int: float = 0.005,
             dt_snap: float = 0.01, uncertain: Sequence[int] | None = None) -> Trajectory:
    """Classical fourth-order Runge-Kutta with snapshots every ``dt_snap``.

    A zero horizon returns the initial snapshot only. Raises
    :class:`SimulationError` carrying the snapshot time at which the state
    first became non-finite.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if dt_int <= 0 or dt_snap <= 0:
        raise ValueError("time steps must be > 0")
    sub = _step_count(dt_snap, dt_int, "dt_snap")
    n_snap = _step_count(horizon, dt_snap, "horizon")
    layout = StateLayout.for_network(net, uncertain)
    x = np.array(x0, dtype=float)
    if x.shape != (layout.n_a,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({layout.n_a},)")
    if np.any(x[layout.m] <= 0):
        raise ValueError("pseudo-state inertias must be > 0")

    f = _single_state_rhs(net, layout)

    h = dt_int
    states = np.empty((n_snap + 1, layout.n_a))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_snap + 1):
            for _ in range(sub):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                bad = np.flatnonzero(~np.isfinite(x))[0]
                raise SimulationError(f"non-finite state at t = {k * dt_snap:g} s (component {bad})",
                                      time=k * dt_snap, index=int(bad))
            states[k] = x
    times = np.arange(n_snap + 1) * dt_snap
    return Trajectory(times, states, layout)


def generate_training_set(net: ReducedNetwork, x0_true: np.ndarray, m_samples: np.ndarray,
                          horizon: float = 10.0, dt_int: float = 0.005, dt_snap: float = 0.01,
                          uncertain: Sequence[int] | None = None) -> list[Trajectory]:
    """One trajectory per parameter sample, all from the same true-state initial condition."""
    m_samples = np.atleast_2d(np.asarray(m_samples, dtype=float))
    if np.any(m_samples <= 0):
        raise ValueError("every parameter sample must be positive")
    return [simulate(augment(x0_true, m), net, horizon, dt_int, dt_snap, uncertain)
            for m in m_samples]
