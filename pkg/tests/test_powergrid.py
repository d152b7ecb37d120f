import json
import math

import numpy as np
import pytest

from koopman_uq.errors import CaseError
from koopman_uq.powergrid import (augmented_admittance, build_ybus, case_from_dict, internal_emf,
                                  kron_eliminate, kron_reduce, load_case, solve_power_flow)


def test_bundled_case_shape(case39):
    assert (case39.n_bus, len(case39.branches), case39.n_gen) == (39, 46, 10)
    assert [g.bus for g in case39.generators] == [str(b) for b in range(30, 40)]
    assert case39.generators[9].H == 500.0


def test_load_case_roundtrip(tmp_path, two_bus_dict):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(two_bus_dict))
    case = load_case(p)
    assert case.n_bus == 2 and case.generators[0].id == "G1"


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["generators"][0].update(H=0.0), "generators[0].H"),
    (lambda d: d["generators"][0].update(x_d_prime=-0.1), "generators[0].x_d_prime"),
    (lambda d: d["branches"][0].update(x=0.0), "branches[0].x"),
    (lambda d: d["branches"][0].update(to="9"), "branches[0].to"),
    (lambda d: d["buses"][1].update(type="slack"), "buses"),
    (lambda d: d["generators"].append(dict(d["generators"][0], id="G2")), "generators"),
])
def test_invalid_case_names_field(two_bus_dict, mutate, field):
    mutate(two_bus_dict)
    with pytest.raises(CaseError, match=field.replace("[", r"\[").replace("]", r"\]")):
        case_from_dict(two_bus_dict)


def test_disconnected_case_rejected(two_bus_dict):
    two_bus_dict["buses"].append({"id": "3", "type": "PQ"})
    with pytest.raises(CaseError, match="not connected"):
        case_from_dict(two_bus_dict)


def test_two_bus_closed_form(two_bus):
    # lossless line, x = 1, P load 0.05, Q load 0: V2 = cos(theta2), sin(2 theta2) = -0.1
    pf = solve_power_flow(two_bus)
    theta = -0.5 * math.asin(0.1)
    assert pf.converged
    assert pf.theta[1] == pytest.approx(theta, abs=1e-9)
    assert pf.V[1] == pytest.approx(math.cos(theta), abs=1e-9)
    assert pf.max_mismatch <= 1e-8


def test_balanced_flat_start_takes_no_iterations(two_bus_dict):
    two_bus_dict["buses"][1]["P_load"] = 0.0
    two_bus_dict["generators"][0]["P_set"] = 0.0
    pf = solve_power_flow(case_from_dict(two_bus_dict))
    assert pf.converged and pf.iterations == 0
    np.testing.assert_allclose(pf.V, 1.0)


def test_39_bus_power_flow_matches_reference(case39, pf39):
    assert pf39.converged and pf39.iterations <= 6
    assert pf39.max_mismatch <= 1e-8
    b1 = case39.bus_index["1"]
    assert pf39.V[b1] == pytest.approx(1.0393836, abs=1e-6)
    assert math.degrees(pf39.theta[b1]) == pytest.approx(-13.5366, abs=1e-3)


def test_39_bus_power_balance(case39, pf39):
    # total injection equals the series-resistance losses
    V = pf39.complex_voltage
    idx = case39.bus_index
    losses = 0.0
    for br in case39.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        I = (V[i] / br.tap - V[j]) / complex(br.r, br.x)
        losses += br.r * abs(I) ** 2
    assert pf39.P_inj.sum() == pytest.approx(losses, rel=1e-6)
    gen = sum(pf39.P_inj[idx[g.bus]] + case39.buses[idx[g.bus]].P_load for g in case39.generators)
    load = sum(b.P_load for b in case39.buses)
    assert gen == pytest.approx(load + losses, abs=1e-7)


def test_ybus_excludes_branch(case39):
    Y = build_ybus(case39)
    Yo = build_ybus(case39, ["15-16"])
    i, j = case39.bus_index["15"], case39.bus_index["16"]
    assert Y[i, j] != 0 and Yo[i, j] == 0
    with pytest.raises(CaseError):
        build_ybus(case39, ["nope"])


def test_kron_star_delta():
    y = np.array([1.0 - 2j, 0.5 - 4j, 2.0 - 1j])
    Y = np.zeros((4, 4), dtype=complex)
    for k in range(3):
        Y[k, k] += y[k]
        Y[3, 3] += y[k]
        Y[k, 3] -= y[k]
        Y[3, k] -= y[k]
    R = kron_eliminate(Y, [0, 1, 2])
    for a in range(3):
        for b in range(3):
            if a != b:
                assert R[a, b] == pytest.approx(-y[a] * y[b] / y.sum(), rel=1e-12)
    np.testing.assert_allclose(R.sum(axis=1), 0, atol=1e-12)


def test_kron_identity_when_nothing_eliminated():
    Y = np.array([[2 - 1j, -1 + 0.5j], [-1 + 0.5j, 3 - 2j]])
    np.testing.assert_array_equal(kron_eliminate(Y, [0, 1]), Y)


def test_reduced_network_is_reciprocal(net39):
    np.testing.assert_allclose(net39.Y_red, net39.Y_red.T, atol=1e-12)


def test_kron_reduce_matches_full_network_currents(case39, pf39):
    # injecting E at the internal nodes with zero injection elsewhere
    Y_aug, keep = augmented_admittance(case39, pf39, ["15-16"])
    net = kron_reduce(case39, pf39, ["15-16"])
    E = net.E * np.exp(1j * net.delta0)
    ng = len(keep)
    V_bus = np.linalg.solve(Y_aug[ng:, ng:], -Y_aug[ng:, :ng] @ E)
    I_full = Y_aug[:ng, :ng] @ E + Y_aug[:ng, ng:] @ V_bus
    I_red = net.Y_red @ E
    assert np.linalg.norm(I_red - I_full) / np.linalg.norm(I_full) <= 1e-10


def test_equilibrium_reproduces_dispatch(case39, pf39, net39_intact):
    P_set = np.array([g.P_set for g in case39.generators])
    slack = case39.generator_index("G2")  # bus 31; its stored dispatch is rounded
    others = np.arange(case39.n_gen) != slack
    np.testing.assert_allclose(net39_intact.P_m[others], P_set[others], atol=1e-8)
    assert net39_intact.P_m[slack] == pytest.approx(P_set[slack], abs=1e-5)
    np.testing.assert_allclose(net39_intact.electrical_power(net39_intact.delta0), net39_intact.P_m,
                               atol=1e-10)
    E = internal_emf(case39, pf39)
    np.testing.assert_allclose(np.angle(E), net39_intact.delta0)


def test_reduced_arrays_are_read_only(net39):
    with pytest.raises(ValueError):
        net39.H[0] = 1.0
