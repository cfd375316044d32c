import math
import time

import numpy as np
import pytest

from commlink import (
    EdgeSet,
    Graph,
    ObjectiveOracle,
    comm_delays,
    enumerate_solve,
    fir_h2_norm,
    gen_chain_plant,
    graph_delay,
    implementability_check,
    lambda_max,
    lambda_sweep,
    nesting_report,
    objective,
    propagation_delays,
    qi_delay_check,
    recover_controller,
    run_codesign,
    subspace_masks,
)
from commlink.codesign import CodesignConfig, EnumRow, build_group_spec
from commlink.qispace import project


@pytest.fixture(scope="module")
def chain3_rows(chain3):
    plant, part, base, edges = chain3
    return enumerate_solve(plant, part, base, edges, CodesignConfig())


def test_enumerate_table_shape(chain3, chain3_rows):
    rows = chain3_rows
    assert [r.bitmask for r in rows] == [0, 1, 2, 3]
    assert [r.num_extra_links for r in rows] == [0, 1, 1, 2]
    assert len({r.bitmask for r in rows}) == 4
    nus = [r.nu for r in rows]
    assert rows[0].nu == max(nus)
    assert rows[3].nu == min(nus)


def test_enumerate_nu_monotone_along_chains(chain3_rows):
    by_mask = {r.bitmask: r.nu for r in chain3_rows}
    for m1 in by_mask:
        for m2 in by_mask:
            if m1 != m2 and (m1 & m2) == m1:
                assert by_mask[m2] <= by_mask[m1] + 1e-6


def test_enumerate_guard(chain3):
    plant, part, _, _ = chain3
    big_base = Graph(13, np.eye(13, dtype=int))
    edges13 = EdgeSet(tuple((0, j) for j in range(1, 13)) + ((1, 2),))
    with pytest.raises(ValueError, match="guard"):
        enumerate_solve(plant, part, big_base, edges13)


def test_nesting_report_cases(chain3_rows):
    clean = nesting_report(chain3_rows)
    assert clean.violations == [] and clean.max_violation == 0.0

    perturbed = list(chain3_rows)
    bad = EnumRow(3, 2, perturbed[3].edges, perturbed[0].nu + 1.0)
    perturbed[3] = bad
    rep = nesting_report(perturbed)
    assert len(rep.violations) >= 1
    assert rep.max_violation > 0.9

    single = nesting_report([chain3_rows[0]])
    assert single.violations == []


def test_run_codesign_high_lambda_returns_base(chain3, chain3_rows):
    plant, part, base, edges = chain3
    oracle = ObjectiveOracle(plant, N=10)
    spec = build_group_spec(base, edges, part, 10)
    lmax = lambda_max(oracle, spec)
    res = run_codesign(plant, part, base, edges, 1.01 * lmax, CodesignConfig(N=10))
    assert res.selected_edges == []
    assert np.array_equal(res.gamma_des.adj, base.adj)
    assert abs(res.nu_polished - chain3_rows[0].nu) <= 1e-6


def test_run_codesign_low_lambda_returns_max(chain3, chain3_rows):
    plant, part, base, edges = chain3
    oracle = ObjectiveOracle(plant, N=10)
    spec = build_group_spec(base, edges, part, 10)
    lmax = lambda_max(oracle, spec)
    res = run_codesign(plant, part, base, edges, 1e-3 * lmax, CodesignConfig(N=10))
    assert sorted(res.selected_edges) == [(0, 2), (2, 0)]
    assert abs(res.nu_polished - chain3_rows[3].nu) <= 1e-6


def test_run_codesign_sandwich_bounds(chain3, chain3_rows):
    plant, part, base, edges = chain3
    oracle = ObjectiveOracle(plant, N=10)
    spec = build_group_spec(base, edges, part, 10)
    lmax = lambda_max(oracle, spec)
    for frac in (0.7, 0.25, 0.05):
        res = run_codesign(plant, part, base, edges, frac * lmax, CodesignConfig(N=10))
        assert chain3_rows[0].nu + 1e-9 >= res.nu_polished >= chain3_rows[3].nu - 1e-6


def test_designed_graph_passes_delay_certificate(chain3):
    plant, part, base, edges = chain3
    res = run_codesign(plant, part, base, edges, 1e-3, CodesignConfig(N=10))
    c = comm_delays(res.gamma_des)
    p = propagation_delays(plant, part, mode="structural")
    assert qi_delay_check(c, p).ok
    assert np.all(base.adj <= res.gamma_des.adj)


def test_polish_never_worse_than_projected_regularized(chain3):
    plant, part, base, edges = chain3
    oracle = ObjectiveOracle(plant, N=10)
    spec = build_group_spec(base, edges, part, 10)
    lmax = lambda_max(oracle, spec)
    from commlink.solvers import group_lasso_fista

    for frac in (0.6, 0.2):
        lam = frac * lmax
        sol = group_lasso_fista(oracle, spec, lam)
        res = run_codesign(plant, part, base, edges, lam, CodesignConfig(N=10))
        mask_des = subspace_masks(res.gamma_des, part)
        projected = project(sol.R, mask_des, mask_des.d + 1)
        assert res.nu_polished**2 <= objective(oracle, projected) + 1e-9


def test_recovered_controller_implementable_on_designed_graph(chain3):
    plant, part, base, edges = chain3
    cfg = CodesignConfig(N=10)
    oracle = ObjectiveOracle(plant, N=10)
    for lam in (1.0, 0.05, 1e-4):
        res = run_codesign(plant, part, base, edges, lam, cfg)
        k = recover_controller(plant, res.polished, oracle.T_max)
        assert implementability_check(k, res.gamma_des, part, tol_zero=1e-9)


def test_run_codesign_rejects_bad_base(chain3):
    plant, part, _, edges = chain3
    disconnected = Graph(3, np.eye(3, dtype=int))
    with pytest.raises(ValueError, match="strongly connected"):
        run_codesign(plant, part, disconnected, EdgeSet(((0, 2),)), 0.1)
    # one-directional ring on a 5-chain: neighbor messages travel the long
    # way around, slower than the dynamics propagate, so the delay
    # certificate fails
    plant5, part5 = gen_chain_plant(5, 0.2, 1)
    ring = np.eye(5, dtype=int)
    for j in range(5):
        ring[(j + 1) % 5, j] = 1
    with pytest.raises(ValueError, match="certificate"):
        run_codesign(plant5, part5, Graph(5, ring), EdgeSet(()), 0.1)


def test_run_codesign_horizon_validation(chain3):
    plant, part, base, edges = chain3
    with pytest.raises(ValueError, match="horizon"):
        run_codesign(plant, part, base, edges, 0.1, CodesignConfig(N=1))


def test_determinism_bit_identical(chain3):
    plant, part, base, edges = chain3
    cfg = CodesignConfig(N=10)
    a = run_codesign(plant, part, base, edges, 0.03, cfg)
    b = run_codesign(plant, part, base, edges, 0.03, cfg)
    assert a.nu_polished == b.nu_polished
    assert a.reg_objective == b.reg_objective
    assert a.group_norms == b.group_norms
    assert np.array_equal(a.polished.coeffs, b.polished.coeffs)
    assert a.diagnostics == b.diagnostics


def test_lambda_sweep_shape_and_endpoint(chain3):
    plant, part, base, edges = chain3
    t0 = time.monotonic()
    results = lambda_sweep(plant, part, base, edges, CodesignConfig(N=10))
    elapsed = time.monotonic() - t0
    assert len(results) == 12
    lams = [r.lam for r in results]
    assert lams == sorted(lams, reverse=True)
    assert results[0].selected_edges == []
    assert lams[0] / lams[-1] == pytest.approx(1e3, rel=1e-9)
    assert all(r.diagnostics["converged"] for r in results)
    assert elapsed < 60.0
    # edge-count trend is logged, not asserted: group-lasso paths may wiggle
    counts = [len(r.selected_edges) for r in results]
    print("sweep extra-link counts:", counts)


def test_lambda_sweep_explicit_grid(chain3):
    plant, part, base, edges = chain3
    cfg = CodesignConfig(N=10, lambda_grid=(0.5, 0.01, 2.0))
    results = lambda_sweep(plant, part, base, edges, cfg)
    assert [r.lam for r in results] == [2.0, 0.5, 0.01]
