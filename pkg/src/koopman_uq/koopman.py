"""Observable dictionaries, EDMD fitting and surrogate realization.

Convention: observables are columns, ``g(x_{k+1}) ~ K g(x_k)``. With
``K R = R diag(mu)`` and ``L = R^{-1}``, eigenfunctions are ``phi(x) = L g(x)``
and the Koopman modes are the identity-observable rows of ``R``.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .artifacts import npy_bytes, read_npy, write_zip_entries
from .dynamics import Trajectory
from .errors import FitError, NumericalError

KINDS = ("linear", "hermite2", "hermite2_trig")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dictionary:
    """Observable set over the augmented state.

    Block order: standardized identity coordinates ``z`` (``n_a``), then the
    polynomial block ``[1, z_i**2 - 1, z_i z_j (i < j)]``, then for
    ``hermite2_trig`` ``[cos x_i, sin x_i]`` over the raw true-state
    coordinates. ``linear`` keeps only ``[z, 1]``.
    """

    kind: str
    n_g: int
    n_m: int
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}; expected one of {KINDS}")
        for name in ("shift", "scale"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.shift.shape != (self.n_a,) or self.scale.shape != (self.n_a,):
            raise ValueError("standardization must have one entry per state coordinate")
        if np.any(self.scale <= 0):
            raise ValueError("standardization scales must be > 0")

    @property
    def n_a(self) -> int:
        return 2 * self.n_g + self.n_m

    @property
    def n_d(self) -> int:
        n = self.n_a + 1
        if self.kind == "linear":
            return n
        n += self.n_a + self.n_a * (self.n_a - 1) // 2
        if self.kind == "hermite2_trig":
            n += 4 * self.n_g
        return n

    @property
    def state_rows(self) -> np.ndarray:
        return np.arange(self.n_a)

    def _pairs(self):
        i, j = np.triu_indices(self.n_a, k=1)
        return i, j

    def descriptors(self) -> list[str]:
        names = [f"z{i}" for i in range(self.n_a)] + ["1"]
        if self.kind == "linear":
            return names
        names += [f"He2(z{i})" for i in range(self.n_a)]
        names += [f"z{i}*z{j}" for i, j in combinations(range(self.n_a), 2)]
        if self.kind == "hermite2_trig":
            for i in range(2 * self.n_g):
                names += [f"cos(x{i})", f"sin(x{i})"]
        return names

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def unstandardize(self, z):
        return np.asarray(z) * self.scale + self.shift

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Observables for states of shape ``(..., n_a)`` -> ``(..., n_d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_a:
            raise ValueError(f"state has {x.shape[-1]} coordinates, dictionary expects {self.n_a}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite state passed to dictionary")
        z = self.standardize(x)
        blocks = [z, np.ones(x.shape[:-1] + (1,))]
        if self.kind != "linear":
            i, j = self._pairs()
            blocks += [z * z - 1.0, z[..., i] * z[..., j]]
            if self.kind == "hermite2_trig":
                raw = x[..., : 2 * self.n_g]
                trig = np.stack([np.cos(raw), np.sin(raw)], axis=-1)
                blocks.append(trig.reshape(x.shape[:-1] + (4 * self.n_g,)))
        return np.concatenate(blocks, axis=-1)

    def to_json(self) -> dict:
        return {"kind": self.kind, "n_g": self.n_g, "n_m": self.n_m,
                "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Dictionary":
        return cls(d["kind"], int(d["n_g"]), int(d["n_m"]), np.array(d["shift"]), np.array(d["scale"]))


def evaluate_dictionary(dictionary: Dictionary, x_a) -> np.ndarray:
    return dictionary.evaluate(x_a)


def build_dictionary(kind: str, n_g: int, n_m: int, training_snapshots) -> Dictionary:
    """Learn the per-coordinate standardization from training data.

    ``training_snapshots`` is an ``(N, n_a)`` array or a list of trajectories.
    Coordinates with zero spread get scale 1.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dictionary kind {kind!r}; expected one of {KINDS}")
    X = _stack_states(training_snapshots)
    if X.shape[0] == 0:
        raise ValueError("no training snapshots")
    if X.shape[1] != 2 * n_g + n_m:
        raise ValueError(f"snapshots have {X.shape[1]} coordinates, expected {2 * n_g + n_m}")
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[~(scale > 1e-12 * np.maximum(1.0, np.abs(shift)))] = 1.0
    return Dictionary(kind, n_g, n_m, shift, scale)


def _stack_states(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return np.atleast_2d(data)
    return np.vstack([t.states if isinstance(t, Trajectory) else np.atleast_2d(t) for t in data])


def truncated_pinv(G: np.ndarray, rel_tol: float) -> tuple[np.ndarray, int]:
    """SVD pseudo-inverse dropping singular values below ``rel_tol * sigma_max``."""
    U, s, Vt = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0:
        return np.zeros_like(G.T), 0
    keep = s >= rel_tol * s[0]
    rank = int(keep.sum())
    return (Vt[keep].T / s[keep]) @ U[:, keep].T, rank


@dataclass(frozen=True)
class KoopmanModel:
    mu: np.ndarray
    R: np.ndarray
    L: np.ndarray
    dictionary: Dictionary
    dt: float
    svd_truncation: float
    K: np.ndarray
    rank: int = 0
    residual: float = float("nan")
    condition: float = float("nan")

    @property
    def n_d(self) -> int:
        return self.dictionary.n_d

    @property
    def state_rows(self) -> np.ndarray:
        return self.dictionary.state_rows

    @property
    def modes(self) -> np.ndarray:
        """Koopman modes in standardized coordinates, one column per eigenvalue."""
        return self.R[self.state_rows]


def _snapshot_pairs(trajectories: Sequence[Trajectory]):
    if not trajectories:
        raise FitError("no trajectories")
    dts = []
    for t in trajectories:
        if len(t) < 2:
            raise FitError("every trajectory needs at least two snapshots")
        dts.append(t.dt)
    dt = dts[0]
    if any(abs(d - dt) > 1e-9 * max(dt, 1.0) for d in dts):
        raise FitError(f"trajectories do not share a snapshot interval: {sorted(set(dts))}")
    X = np.vstack([t.states[:-1] for t in trajectories])
    Y = np.vstack([t.states[1:] for t in trajectories])
    return X, Y, dt


def fit_edmd(trajectories: Sequence[Trajectory], dictionary: Dictionary,
             svd_truncation: float = 1e-10, max_condition: float = 1e8) -> KoopmanModel:
    """Least-squares Koopman matrix from all consecutive snapshot pairs.

    ``K = (Psi_Y Psi_X^T)(Psi_X Psi_X^T)^+`` with a truncated-SVD pseudo-inverse.
    Raises :class:`FitError` when the eigenvector matrix is too ill-conditioned
    to invert (``cond(R) > max_condition``), which is how a defective or nearly
    defective ``K`` shows up numerically.
    """
    X, Y, dt = _snapshot_pairs(trajectories)
    PX = dictionary.evaluate(X)
    PY = dictionary.evaluate(Y)
    G = PX.T @ PX
    A = PY.T @ PX
    G_pinv, rank = truncated_pinv(G, svd_truncation)
    K = A @ G_pinv

    mu, R = np.linalg.eig(K)
    # unit-norm columns; conj pairs stay conj pairs
    R = R / np.linalg.norm(R, axis=0)
    cond = float(np.linalg.cond(R))
    if not np.isfinite(cond) or cond > max_condition:
        raise FitError(f"eigenvector matrix is ill-conditioned (cond = {cond:.3e} > {max_condition:.1e}); "
                       f"Koopman matrix rank {rank} of {dictionary.n_d}. Increase svd_truncation or "
                       "use a smaller dictionary.")
    L = np.linalg.inv(R)

    pred = PX @ K.T
    resid = float(np.mean(np.linalg.norm(pred - PY, axis=1) / np.linalg.norm(PY, axis=1)))
    return KoopmanModel(mu=mu, R=R, L=L, dictionary=dictionary, dt=dt, svd_truncation=svd_truncation,
                        K=K, rank=rank, residual=resid, condition=cond)


def eigenfunctions_at(model: KoopmanModel, x_a0) -> np.ndarray:
    """Eigenfunction values ``L g(x)`` for states of shape ``(..., n_a)``."""
    g = model.dictionary.evaluate(x_a0)
    return g @ model.L.T


def continuous_eigenvalues(model: KoopmanModel) -> np.ndarray:
    """``log(mu) / dt`` on the principal branch; ``mu == 0`` maps to ``-inf``."""
    mu = np.asarray(model.mu, dtype=complex)
    out = np.full(mu.shape, complex(-np.inf, 0.0))
    nz = mu != 0
    out[nz] = np.log(mu[nz]) / model.dt
    return out


def eigen_powers(mu: np.ndarray, k_max: int) -> np.ndarray:
    """``(k_max + 1, n)`` array of ``mu**k``."""
    k = np.arange(k_max + 1)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        return np.power(mu[None, :], k)


@dataclass(frozen=True)
class SurrogateTrajectory:
    times: np.ndarray
    states: np.ndarray
    max_imag_residual: float
    flagged: bool = False


def realize(model: KoopmanModel, x_a0, k_max: int) -> SurrogateTrajectory:
    """Propagate ``sum_i phi_i(x_a0) v_i mu_i**k`` for ``k = 0..k_max``."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    phi = eigenfunctions_at(model, np.asarray(x_a0, dtype=float))
    V = eigen_powers(model.mu, k_max)
    Z = (V * phi) @ model.modes.T  # (k_max+1, n_a), standardized
    finite = np.all(np.isfinite(Z), axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise NumericalError(f"surrogate overflow at step k = {bad} (max |mu| = {np.abs(model.mu).max():.6f})")
    states_c = Z * model.dictionary.scale + model.dictionary.shift
    states = states_c.real
    imag = float(np.abs(states_c.imag).max())
    scale = float(np.abs(states).max())
    flagged = imag > 1e-6 * max(scale, 1e-300)
    return SurrogateTrajectory(np.arange(k_max + 1) * model.dt, states, imag, flagged)


def save_model(model: KoopmanModel, path, extra: dict | None = None) -> None:
    """Write a versioned model archive: ``.npy`` arrays plus ``meta.json``."""
    meta = {
        "format": "koopman-uq-model", "version": FORMAT_VERSION,
        "dictionary": model.dictionary.to_json(), "dt": model.dt,
        "svd_truncation": model.svd_truncation, "rank": model.rank,
        "residual": model.residual, "condition": model.condition,
        "state_rows": model.state_rows.tolist(), "extra": extra or {},
    }
    entries = {"meta.json": json.dumps(meta, indent=1, sort_keys=True).encode()}
    for name in ("mu", "R", "L", "K"):
        entries[f"{name}.npy"] = npy_bytes(getattr(model, name))
    write_zip_entries(path, entries)


def load_model(path) -> tuple[KoopmanModel, dict]:
    """Read a model archive; returns the model and the ``extra`` metadata."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "koopman-uq-model":
            raise ValueError(f"{path}: not a koopman-uq model archive")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model version {meta.get('version')}")
        arrays = {n: read_npy(zf.read(f"{n}.npy")) for n in ("mu", "R", "L", "K")}
    model = KoopmanModel(
        mu=arrays["mu"], R=arrays["R"], L=arrays["L"], K=arrays["K"],
        dictionary=Dictionary.from_json(meta["dictionary"]), dt=float(meta["dt"]),
        svd_truncation=float(meta["svd_truncation"]), rank=int(meta["rank"]),
        residual=float(meta["residual"]), condition=float(meta["condition"]),
    )
    return model, meta.get("extra", {})
