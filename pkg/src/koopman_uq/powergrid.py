"""Grid case ingestion, Newton-Raphson power flow and classical-model Kron reduction.

All electrical quantities are per-unit on the case ``base_MVA``; angles in radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CaseError, PowerFlowError

BUS_TYPES = ("slack", "PV", "PQ")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Bus:
    id: str
    type: str
    P_load: float = 0.0
    Q_load: float = 0.0
    V_setpoint: float = 1.0
    base_kV: float = 1.0


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_shunt: float = 0.0
    in_service: bool = True
    tap: float = 1.0  # fixed off-nominal ratio at the from end


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    P_set: float
    x_d_prime: float
    H: float
    D: float = 0.0


@dataclass(frozen=True)
class Case:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_MVA: float = 100.0
    nominal_freq_Hz: float = 60.0
    name: str = ""

    @property
    def bus_index(self) -> dict[str, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def generator_index(self, gen_id: str) -> int:
        for k, g in enumerate(self.generators):
            if g.id == gen_id:
                return k
        raise CaseError(f"unknown generator id {gen_id!r}")

    def branch_index(self, branch_id: str) -> int:
        for k, br in enumerate(self.branches):
            if br.id == branch_id:
                return k
        raise CaseError(f"unknown branch id {branch_id!r}")


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise CaseError(f"{path}: {msg}")


def _num(entry: dict, key: str, path: str, default=None) -> float:
    if key not in entry:
        if default is None:
            raise CaseError(f"{path}.{key}: missing")
        return float(default)
    try:
        val = float(entry[key])
    except (TypeError, ValueError):
        raise CaseError(f"{path}.{key}: not a number ({entry[key]!r})") from None
    _require(math.isfinite(val), f"{path}.{key}", "not finite")
    return val


def case_from_dict(data: dict) -> Case:
    """Build and validate a :class:`Case` from the JSON case schema."""
    if not isinstance(data, dict):
        raise CaseError("case: top level must be an object")
    for key in ("system", "buses", "branches", "generators"):
        _require(key in data, "case", f"missing top-level key {key!r}")

    system = data["system"]
    base_MVA = _num(system, "base_MVA", "system")
    freq = _num(system, "nominal_freq_Hz", "system")
    _require(base_MVA > 0, "system.base_MVA", "must be > 0")
    _require(freq > 0, "system.nominal_freq_Hz", "must be > 0")

    buses = []
    for k, b in enumerate(data["buses"]):
        path = f"buses[{k}]"
        _require("id" in b, path, "missing id")
        btype = b.get("type")
        _require(btype in BUS_TYPES, f"{path}.type", f"must be one of {BUS_TYPES}, got {btype!r}")
        buses.append(Bus(
            id=str(b["id"]), type=btype,
            P_load=_num(b, "P_load", path, 0.0), Q_load=_num(b, "Q_load", path, 0.0),
            V_setpoint=_num(b, "V_setpoint", path, 1.0), base_kV=_num(b, "base_kV", path, 1.0),
        ))
        _require(buses[-1].V_setpoint > 0, f"{path}.V_setpoint", "must be > 0")
    ids = [b.id for b in buses]
    dup = {i for i in ids if ids.count(i) > 1}
    _require(not dup, "buses", f"duplicate ids {sorted(dup)}")
    n_slack = sum(b.type == "slack" for b in buses)
    _require(n_slack == 1, "buses", f"exactly one slack bus required, found {n_slack}")
    known = set(ids)

    branches = []
    for k, br in enumerate(data["branches"]):
        path = f"branches[{k}]"
        f, t = str(br.get("from")), str(br.get("to"))
        _require(f in known, f"{path}.from", f"unknown bus {f!r}")
        _require(t in known, f"{path}.to", f"unknown bus {t!r}")
        _require(f != t, path, "branch endpoints must differ")
        item = Branch(
            id=str(br.get("id", f"{f}-{t}")), from_bus=f, to_bus=t,
            r=_num(br, "r", path), x=_num(br, "x", path), b_shunt=_num(br, "b_shunt", path, 0.0),
            in_service=bool(br.get("in_service", True)), tap=_num(br, "tap", path, 1.0),
        )
        _require(item.r >= 0, f"{path}.r", "must be >= 0")
        _require(item.x > 0, f"{path}.x", "must be > 0")
        _require(item.tap > 0, f"{path}.tap", "must be > 0")
        branches.append(item)
    br_ids = [b.id for b in branches]
    dup = {i for i in br_ids if br_ids.count(i) > 1}
    _require(not dup, "branches", f"duplicate ids {sorted(dup)}")

    generators = []
    for k, g in enumerate(data["generators"]):
        path = f"generators[{k}]"
        bus = str(g.get("bus"))
        _require(bus in known, f"{path}.bus", f"unknown bus {bus!r}")
        item = Generator(
            id=str(g.get("id", f"G{k + 1}")), bus=bus, P_set=_num(g, "P_set", path),
            x_d_prime=_num(g, "x_d_prime", path), H=_num(g, "H", path), D=_num(g, "D", path, 0.0),
        )
        _require(item.H > 0, f"{path}.H", "must be > 0")
        _require(item.x_d_prime > 0, f"{path}.x_d_prime", "must be > 0")
        _require(item.D >= 0, f"{path}.D", "must be >= 0")
        generators.append(item)
    gen_ids = [g.id for g in generators]
    dup = {i for i in gen_ids if gen_ids.count(i) > 1}
    _require(not dup, "generators", f"duplicate ids {sorted(dup)}")
    gen_buses = [g.bus for g in generators]
    dup = {i for i in gen_buses if gen_buses.count(i) > 1}
    _require(not dup, "generators", f"more than one generator on bus {sorted(dup)}")

    case = Case(tuple(buses), tuple(branches), tuple(generators), base_MVA, freq, str(data.get("name", "")))
    _check_connected(case)
    return case


def _check_connected(case: Case) -> None:
    idx = case.bus_index
    adj: dict[int, list[int]] = {k: [] for k in range(case.n_bus)}
    for br in case.branches:
        if br.in_service:
            i, j = idx[br.from_bus], idx[br.to_bus]
            adj[i].append(j)
            adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != case.n_bus:
        missing = sorted(case.buses[k].id for k in set(range(case.n_bus)) - seen)
        raise CaseError(f"branches: in-service network is not connected (isolated buses {missing})")


def load_case(path) -> Case:
    """Read a UTF-8 JSON case file and validate it."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: not valid JSON ({exc})") from exc
    return case_from_dict(data)


def bundled_case_path(name: str = "ieee39") -> Path:
    return Path(str(resources.files("koopman_uq") / "data" / f"{name}.json"))


def new_england() -> Case:
    """The bundled 10-machine, 39-bus New England case."""
    return load_case(bundled_case_path("ieee39"))


def build_ybus(case: Case, excluded_branches: Iterable[str] = ()) -> np.ndarray:
    """Dense bus admittance matrix over in-service branches not in ``excluded_branches``."""
    excluded = set(excluded_branches)
    for bid in excluded:
        case.branch_index(bid)
    idx = case.bus_index
    Y = np.zeros((case.n_bus, case.n_bus), dtype=complex)
    for br in case.branches:
        if not br.in_service or br.id in excluded:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        half_b = 0.5j * br.b_shunt
        Y[i, i] += (ys + half_b) / br.tap**2
        Y[j, j] += ys + half_b
        Y[i, j] -= ys / br.tap
        Y[j, i] -= ys / br.tap
    return Y


@dataclass(frozen=True)
class PowerFlowSolution:
    V: np.ndarray
    theta: np.ndarray
    P_inj: np.ndarray
    Q_inj: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float

    @property
    def complex_voltage(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)


def _specified_injections(case: Case):
    idx = case.bus_index
    P = np.array([-b.P_load for b in case.buses])
    Q = np.array([-b.Q_load for b in case.buses])
    for g in case.generators:
        P[idx[g.bus]] += g.P_set
    return P, Q


def solve_power_flow(case: Case, tol: float = 1e-8, max_iter: int = 20,
                     excluded_branches: Iterable[str] = ()) -> PowerFlowSolution:
    """Polar Newton-Raphson power flow from a flat start.

    Slack and PV magnitudes are held at ``V_setpoint``. ``iterations`` counts Newton
    updates, so a network already balanced at the flat start reports 0.
    Non-convergence is returned as ``converged=False``; a singular Jacobian raises.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    Y = build_ybus(case, excluded_branches)
    types = np.array([b.type for b in case.buses])
    pv = np.flatnonzero(types == "PV")
    pq = np.flatnonzero(types == "PQ")
    pvpq = np.r_[pv, pq]
    P_spec, Q_spec = _specified_injections(case)

    Vm = np.array([b.V_setpoint if b.type != "PQ" else 1.0 for b in case.buses])
    Va = np.zeros(case.n_bus)

    def mismatch(V):
        S = V * np.conj(Y @ V)
        return np.r_[S.real[pvpq] - P_spec[pvpq], S.imag[pq] - Q_spec[pq]]

    V = Vm * np.exp(1j * Va)
    F = mismatch(V)
    err = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        Ibus = Y @ V
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
        Vnorm = V / np.abs(V)
        dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(Vnorm)) + np.conj(np.diag(Ibus)) @ np.diag(Vnorm)
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}") from exc
        Va[pvpq] += dx[: len(pvpq)]
        Vm[pq] += dx[len(pvpq):]
        V = Vm * np.exp(1j * Va)
        F = mismatch(V)
        err = float(np.max(np.abs(F)))
        it += 1

    S = V * np.conj(Y @ V)
    return PowerFlowSolution(
        V=_frozen(np.abs(V)), theta=_frozen(np.angle(V)),
        P_inj=_frozen(S.real), Q_inj=_frozen(S.imag),
        converged=err <= tol, iterations=it, max_mismatch=err,
    )


def kron_eliminate(Y: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Schur complement of ``Y`` onto the ``keep`` nodes."""
    keep = np.asarray(keep, dtype=int)
    drop = np.setdiff1d(np.arange(Y.shape[0]), keep)
    if drop.size == 0:
        return Y[np.ix_(keep, keep)].copy()
    Ykk = Y[np.ix_(keep, keep)]
    Ykd = Y[np.ix_(keep, drop)]
    Ydk = Y[np.ix_(drop, keep)]
    Ydd = Y[np.ix_(drop, drop)]
    try:
        return Ykk - Ykd @ np.linalg.solve(Ydd, Ydk)
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError("eliminated-node admittance block is singular") from exc


@dataclass(frozen=True)
class ReducedNetwork:
    """Generator internal-node network of the classical machine model."""

    Y_red: np.ndarray
    E: np.ndarray
    P_m: np.ndarray
    delta0: np.ndarray
    H: np.ndarray
    D: np.ndarray
    omega_s: float
    gen_ids: tuple[str, ...] = field(default=())

    @property
    def n_gen(self) -> int:
        return len(self.E)

    def electrical_power(self, delta: np.ndarray) -> np.ndarray:
        """P_e for angles of shape ``(..., n_gen)``."""
        V = self.E * np.exp(1j * np.asarray(delta))
        return (V * np.conj(V @ self.Y_red.T)).real


def augmented_admittance(case: Case, pf: PowerFlowSolution,
                         excluded_branches: Iterable[str] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Bus admittance with constant-impedance loads and generator internal nodes.

    Internal nodes come first. Returns ``(Y_aug, keep)`` where ``keep`` indexes the
    internal nodes.
    """
    idx = case.bus_index
    n, ng = case.n_bus, case.n_gen
    Y = build_ybus(case, excluded_branches)
    for k, b in enumerate(case.buses):
        Y[k, k] += complex(b.P_load, -b.Q_load) / pf.V[k] ** 2
    Y_aug = np.zeros((ng + n, ng + n), dtype=complex)
    Y_aug[ng:, ng:] = Y
    for g_k, g in enumerate(case.generators):
        y = 1.0 / (1j * g.x_d_prime)
        b = ng + idx[g.bus]
        Y_aug[g_k, g_k] += y
        Y_aug[b, b] += y
        Y_aug[g_k, b] -= y
        Y_aug[b, g_k] -= y
    return Y_aug, np.arange(ng)


def internal_emf(case: Case, pf: PowerFlowSolution) -> np.ndarray:
    """Complex EMF behind transient reactance for each generator."""
    idx = case.bus_index
    Vc = pf.complex_voltage
    out = np.empty(case.n_gen, dtype=complex)
    for k, g in enumerate(case.generators):
        i = idx[g.bus]
        bus = case.buses[i]
        S_gen = complex(pf.P_inj[i] + bus.P_load, pf.Q_inj[i] + bus.Q_load)
        I_gen = np.conj(S_gen / Vc[i])
        out[k] = Vc[i] + 1j * g.x_d_prime * I_gen
    return out


def kron_reduce(case: Case, pf: PowerFlowSolution,
                excluded_branches: Iterable[str] = ()) -> ReducedNetwork:
    """Reduce the network to generator internal nodes.

    Loads become constant admittances at the power-flow voltages. EMFs, rotor angles
    and mechanical powers come from the pre-disturbance (no exclusions) network, so
    the returned model starts from the pre-disturbance equilibrium while ``Y_red``
    reflects the post-disturbance topology.
    """
    if not pf.converged:
        raise PowerFlowError("kron_reduce needs a converged power flow")
    excluded = tuple(excluded_branches)
    for bid in excluded:
        case.branch_index(bid)
    E_c = internal_emf(case, pf)

    Y_aug, keep = augmented_admittance(case, pf)
    Y_pre = kron_eliminate(Y_aug, keep)
    P_m = (E_c * np.conj(Y_pre @ E_c)).real
    if excluded:
        Y_aug, keep = augmented_admittance(case, pf, excluded)
        Y_red = kron_eliminate(Y_aug, keep)
    else:
        Y_red = Y_pre

    return ReducedNetwork(
        Y_red=_frozen(Y_red, complex), E=_frozen(np.abs(E_c)), P_m=_frozen(P_m),
        delta0=_frozen(np.angle(E_c)),
        H=_frozen([g.H for g in case.generators]), D=_frozen([g.D for g in case.generators]),
        omega_s=2.0 * math.pi * case.nominal_freq_Hz,
        gen_ids=tuple(g.id for g in case.generators),
    )
