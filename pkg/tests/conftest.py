"""Shared fixtures: small hand-checkable cases and the bundled 39-bus system."""

from __future__ import annotations

import copy
import math

import numpy as np
import pytest

from koopman_uq.powergrid import ReducedNetwork, case_from_dict, kron_reduce, new_england, solve_power_flow

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def _gen(gid, bus, P_set=0.0, H=3.0, xd=0.2):
    return {"id": gid, "bus": bus, "P_set": P_set, "x_d_prime": xd, "H": H, "D": 0.0}


TWO_BUS = {
    "name": "two-bus",
    "system": {"base_MVA": 100.0, "nominal_freq_Hz": 60.0},
    "buses": [
        {"id": "1", "type": "slack", "V_setpoint": 1.0},
        {"id": "2", "type": "PQ", "P_load": 0.05, "Q_load": 0.0},
    ],
    "branches": [{"id": "1-2", "from": "1", "to": "2", "r": 0.0, "x": 1.0}],
    "generators": [_gen("G1", "1", 0.05)],
}


@pytest.fixture
def two_bus_dict():
    return copy.deepcopy(TWO_BUS)


@pytest.fixture
def two_bus(two_bus_dict):
    return case_from_dict(two_bus_dict)


@pytest.fixture(scope="session")
def case39():
    return new_england()


@pytest.fixture(scope="session")
def pf39(case39):
    return solve_power_flow(case39)


@pytest.fixture(scope="session")
def net39_intact(case39, pf39):
    return kron_reduce(case39, pf39)


@pytest.fixture(scope="session")
def net39(case39, pf39):
    return kron_reduce(case39, pf39, ["15-16"])


def smib_network(H=3.0, P_max=2.0, delta_eq=0.5, H_inf=1e9) -> ReducedNetwork:
    """Lossless single machine against a (very heavy) second machine at angle 0.

    With ``E = 1`` and line susceptance ``P_max`` the electrical power is
    ``P_max sin(delta_1 - delta_2)``.
    """
    B = P_max
    Y = np.array([[-1j * B, 1j * B], [1j * B, -1j * B]])
    P_e = P_max * math.sin(delta_eq)
    return ReducedNetwork(Y_red=Y, E=np.ones(2), P_m=np.array([P_e, -P_e]),
                          delta0=np.array([delta_eq, 0.0]), H=np.array([H, H_inf]), D=np.zeros(2),
                          omega_s=2 * math.pi * 60.0, gen_ids=("G1", "Ginf"))


@pytest.fixture
def smib():
    return smib_network
