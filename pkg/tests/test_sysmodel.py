import json

import numpy as np
import pytest

from commlink import (
    PlantModel,
    Partition,
    base_graph,
    gen_chain_plant,
    graph_delay,
    load_plant,
    markov_params,
    save_plant,
    validate_plant,
)
from commlink.commgraph import INFINITE

from conftest import ref_markov


def test_load_save_round_trip_is_bit_exact():
    plant, part = gen_chain_plant(3, 0.2, 7)
    doc = json.loads(json.dumps(save_plant(plant, part)))
    plant2, part2 = load_plant(doc)
    for key in ("A", "B1", "B2", "C1", "C2", "D12", "D21"):
        assert np.array_equal(getattr(plant, key), getattr(plant2, key))
    assert part2.u_sizes == part.u_sizes and part2.y_sizes == part.y_sizes
    assert plant2.s == 3 and part2.n == 3
    assert part2.u_sizes == (1, 1, 1) and part2.y_sizes == (1, 1, 1)


def test_load_plant_names_offending_field():
    plant, part = gen_chain_plant(3, 0.2, 7)
    doc = save_plant(plant, part)
    doc["B2"] = np.ones((3, 2)).tolist()  # wrong column count
    with pytest.raises(ValueError, match="B2"):
        load_plant(doc)


def test_load_plant_requires_partition():
    plant, part = gen_chain_plant(3, 0.2, 7)
    doc = save_plant(plant, part)
    del doc["partition"]
    with pytest.raises(ValueError, match="partition required"):
        load_plant(doc)


def test_load_plant_rejects_ragged_matrix():
    plant, part = gen_chain_plant(2, 0.2, 0)
    doc = save_plant(plant, part)
    doc["C1"] = [[1.0, 0.0], [1.0]]
    with pytest.raises(ValueError, match="C1"):
        load_plant(doc)


def _tiny_plant(A, B2=None, C2=None):
    s = A.shape[0]
    B2 = np.eye(s) if B2 is None else B2
    C2 = np.eye(s) if C2 is None else C2
    return PlantModel(
        A=A,
        B1=np.hstack([np.eye(s), np.zeros((s, C2.shape[0]))]),
        B2=B2,
        C1=np.vstack([np.eye(s), np.zeros((B2.shape[1], s))]),
        C2=C2,
        D12=np.vstack([np.zeros((s, B2.shape[1])), np.eye(B2.shape[1])]),
        D21=np.hstack([np.zeros((C2.shape[0], s)), np.eye(C2.shape[0])]),
    )


def test_validate_diagonal_case():
    plant = _tiny_plant(0.5 * np.eye(3))
    rep = validate_plant(plant, Partition((1, 1, 1), (1, 1, 1)))
    assert rep.stable
    assert rep.b2_block_diag and rep.c2_block_diag
    assert max(rep.param_assumption_residuals) == 0.0


def test_validate_flags_unstable():
    plant = _tiny_plant(1.1 * np.eye(2))
    rep = validate_plant(plant, Partition((1, 1), (1, 1)))
    assert not rep.stable
    assert any("stable" in w for w in rep.warnings)


def test_validate_unit_column_d12_residual_zero():
    # q1 = 2, p2 = 1: D12 = [1; 0] has orthonormal columns
    plant = PlantModel(
        A=np.array([[0.5]]),
        B1=np.array([[1.0, 0.0]]),
        B2=np.array([[1.0]]),
        C1=np.array([[0.0], [0.0]]),
        C2=np.array([[1.0]]),
        D12=np.array([[1.0], [0.0]]),
        D21=np.array([[0.0, 1.0]]),
    )
    rep = validate_plant(plant, Partition((1,), (1,)))
    assert rep.param_assumption_residuals[0] == 0.0


def test_markov_feedthrough_positions():
    plant, _ = gen_chain_plant(3, 0.2, 7)
    (g22_0,) = markov_params(plant, "22", 0, 0)
    assert np.array_equal(g22_0, np.zeros((3, 3)))
    (g12_0,) = markov_params(plant, "12", 0, 0)
    assert np.array_equal(g12_0, plant.D12)
    (g11_0,) = markov_params(plant, "11", 0, 0)
    assert np.array_equal(g11_0, np.zeros((6, 6)))


def test_markov_scalar_power():
    plant = PlantModel(
        A=np.array([[0.5]]),
        B1=np.array([[1.0]]),
        B2=np.array([[1.0]]),
        C1=np.array([[1.0]]),
        C2=np.array([[1.0]]),
        D12=np.array([[0.0]]),
        D21=np.array([[0.0]]),
    )
    (g22_3,) = markov_params(plant, "22", 3, 3)
    assert g22_3[0, 0] == pytest.approx(0.25, abs=0)


def test_markov_matches_reference_on_random_plants():
    rng = np.random.default_rng(11)
    for seed in range(4):
        plant, _ = gen_chain_plant(4, 0.3, seed)
        for block in ("11", "12", "21", "22"):
            coeffs = markov_params(plant, block, 0, 6)
            for t, coef in enumerate(coeffs):
                assert np.allclose(coef, ref_markov(plant, block, t), atol=1e-13)
    with pytest.raises(ValueError, match="range"):
        markov_params(plant, "22", 3, 1)


def test_chain_plant_matches_three_chain_topology():
    plant, part = gen_chain_plant(3, 0.2, 7)
    expected = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    assert np.array_equal(base_graph(plant, part).adj, expected)


def test_chain_plant_decoupled_case():
    plant, part = gen_chain_plant(2, 0.0, 3)
    assert np.array_equal(plant.A, np.diag(np.diag(plant.A)))
    base = base_graph(plant, part)
    assert graph_delay(base) == INFINITE


def test_chain_plant_deterministic():
    a, pa = gen_chain_plant(3, 0.2, 7)
    b, pb = gen_chain_plant(3, 0.2, 7)
    for key in ("A", "B1", "B2", "C1", "C2", "D12", "D21"):
        assert np.array_equal(getattr(a, key), getattr(b, key))
    assert pa == pb


def test_chain_plant_always_validates_clean():
    for seed in range(8):
        plant, part = gen_chain_plant(3 + seed % 3, 0.25, seed)
        rep = validate_plant(plant, part)
        assert rep.stable
        assert rep.base_strongly_connected
        assert max(rep.param_assumption_residuals) == 0.0


def test_g22_block_support_bounded_by_topology_powers():
    for seed in range(6):
        plant, part = gen_chain_plant(4, 0.3, seed)
        topo = base_graph(plant, part).adj.astype(bool)
        reach = np.eye(4, dtype=bool)
        for t in range(1, 7):
            coef = ref_markov(plant, "22", t)
            assert np.all((np.abs(coef) > 1e-12) <= reach)
            reach = (reach.astype(np.uint8) @ topo.astype(np.uint8)) > 0


def test_gen_chain_plant_preconditions():
    with pytest.raises(ValueError, match="n >= 2"):
        gen_chain_plant(1, 0.2, 0)
    with pytest.raises(ValueError, match="nonnegative"):
        gen_chain_plant(3, -0.1, 0)
