import csv

import numpy as np
import pytest

from volterra_euler import (DomainError, InvalidArgumentError, ProblemDefinitionError,
                            SeparableTerm, SvieProblem, coarsen, evaluate_offgrid,
                            example_section5, example_svie_benchmark, make_uniform, sample,
                            solve_forward)
from volterra_euler.svie import node_statistics, write_statistics_csv


def _free_term_only():
    return SvieProblem(1, phi=lambda t, w: np.cos(t) + w ** 2,
                       b=lambda t, s, x: np.zeros_like(x),
                       sigma=lambda t, s, x: np.zeros_like(x))


def _outer_free():
    """Kernels that ignore the outer time, so all three solvers apply."""
    def b(t, s, x):
        return np.sin(s) * np.tanh(x)

    def sig(t, s, x):
        return 0.2 + 0.1 * np.cos(x)

    terms = (SeparableTerm(outer=lambda t: 1.0, drift=lambda s, x: np.sin(s) * np.tanh(x),
                           diffusion=lambda s, x: 0.2 + 0.1 * np.cos(x)),)
    return SvieProblem(1, phi=lambda t, w: 0.5 + 0 * w, b=b, sigma=sig,
                       outer_time_free=True, separable=terms)


def test_zero_kernels_give_free_term():
    e = sample(make_uniform(1.0, 20), 50, seed=1)
    x = solve_forward(_free_term_only(), e).values[:, :, 0]
    w = e.brownian()
    np.testing.assert_array_equal(x, np.cos(e.partition.nodes) + w ** 2)


def test_section5_forward_solve_is_brownian_motion():
    svie, _, _ = example_section5()
    e = sample(make_uniform(1.0, 64), 500, seed=3)
    paths = solve_forward(svie, e)
    assert paths.method == "incremental"
    assert paths.values[:, :, 0].tobytes() == e.brownian().tobytes()


def test_initial_condition():
    e = sample(make_uniform(1.0, 10), 20, seed=1)
    x = solve_forward(example_svie_benchmark(), e).values
    np.testing.assert_array_equal(x[:, 0, 0], 1.0)
    assert np.all(np.isfinite(x))


def test_fast_paths_agree_with_full_resum():
    e = sample(make_uniform(1.0, 40), 300, seed=5)
    prob = _outer_free()
    ref = solve_forward(prob, e, method="resum").values
    for method in ("incremental", "separable"):
        x = solve_forward(prob, e, method=method).values
        np.testing.assert_allclose(x, ref, rtol=1e-12, atol=1e-13)


def test_separable_benchmark_agrees_with_resum():
    e = sample(make_uniform(1.0, 64), 200, seed=6)
    prob = example_svie_benchmark()
    ref = solve_forward(prob, e, method="resum").values
    fast = solve_forward(prob, e).values
    np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-13)


def test_method_preconditions():
    e = sample(make_uniform(1.0, 4), 5, seed=1)
    with pytest.raises(InvalidArgumentError):
        solve_forward(example_svie_benchmark(), e, method="incremental")
    with pytest.raises(InvalidArgumentError):
        solve_forward(_free_term_only(), e, method="separable")
    with pytest.raises(InvalidArgumentError):
        solve_forward(_free_term_only(), e, method="magic")


def test_non_finite_kernel_reports_location():
    prob = SvieProblem(1, phi=lambda t, w: 0 * w,
                       b=lambda t, s, x: np.where(s > 0.45, np.inf, 0.0) + 0 * x,
                       sigma=lambda t, s, x: np.ones_like(x))
    e = sample(make_uniform(1.0, 10), 4, seed=1)
    with pytest.raises(ProblemDefinitionError) as info:
        solve_forward(prob, e)
    assert info.value.function == "b"
    path, step = info.value.location
    assert path == 0 and step == 6


def test_offgrid_on_nodes_matches_values():
    prob = example_svie_benchmark()
    e = sample(make_uniform(1.0, 16), 100, seed=2)
    paths = solve_forward(prob, e)
    for i in (0, 3, 9, 16):
        np.testing.assert_allclose(evaluate_offgrid(prob, paths, e, e.partition.nodes[i]),
                                   paths.values[:, i], rtol=1e-12, atol=1e-13)


def test_offgrid_free_term_only():
    prob = _free_term_only()
    e = sample(make_uniform(1.0, 8), 30, seed=2)
    paths = solve_forward(prob, e)
    t = 0.3
    w = e.brownian()
    i, frac = 2, (0.3 - 0.25) / 0.125
    w_t = w[:, i] + frac * (w[:, i + 1] - w[:, i])
    np.testing.assert_allclose(evaluate_offgrid(prob, paths, e, t)[:, 0], np.cos(t) + w_t ** 2,
                               rtol=1e-14)


def test_offgrid_midpoint_bridge_error():
    """Linear interpolation misses the Brownian bridge, variance Delta/4 at the midpoint."""
    svie, _, _ = example_section5()
    fine = sample(make_uniform(1.0, 32), 40_000, seed=9)
    coarse = coarsen(fine, 2)
    paths = solve_forward(svie, coarse)
    t = fine.partition.nodes[5]                       # midpoint of coarse cell 2
    approx = evaluate_offgrid(svie, paths, coarse, t)[:, 0]
    exact = fine.brownian()[:, 5]
    mse = np.mean((approx - exact) ** 2)
    assert mse == pytest.approx(coarse.partition.delta / 4, rel=0.05)


def test_offgrid_domain():
    svie, _, _ = example_section5()
    e = sample(make_uniform(1.0, 8), 4, seed=1)
    paths = solve_forward(svie, e)
    with pytest.raises(DomainError):
        evaluate_offgrid(svie, paths, e, 1.5)


def test_fourth_moment_stable_when_paths_double():
    prob = example_svie_benchmark()
    p = make_uniform(1.0, 64)
    m1 = np.max(np.mean(solve_forward(prob, sample(p, 10_000, seed=4)).values ** 4, axis=0))
    m2 = np.max(np.mean(solve_forward(prob, sample(p, 20_000, seed=4)).values ** 4, axis=0))
    assert np.isfinite(m1) and abs(m2 / m1 - 1) < 0.05


def test_statistics_csv(tmp_path):
    e = sample(make_uniform(1.0, 4), 200, seed=1)
    paths = solve_forward(example_svie_benchmark(), e)
    f = tmp_path / "stats.csv"
    write_statistics_csv(paths, f)
    rows = list(csv.DictReader(open(f)))
    assert [float(r["t"]) for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert list(rows[0]) == ["t", "dim", "mean", "variance", "q0.05", "q0.5", "q0.95"]
    assert float(rows[0]["mean"]) == 1.0 and float(rows[0]["variance"]) == 0.0
    stats = node_statistics(paths)
    assert float(rows[3]["mean"]) == stats[3][2]
    q05, q50, q95 = (float(rows[4][k]) for k in ("q0.05", "q0.5", "q0.95"))
    assert q05 <= q50 <= q95
