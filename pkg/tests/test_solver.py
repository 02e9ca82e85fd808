import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import spectral_residual, tikhonov_dense
from rescurve.operators import DenseOperator, DiagonalOperator
from rescurve.problems import ProblemInstance, make_model_problem
from rescurve.solver import (
    AlphaGrid,
    ConvergenceError,
    SolverError,
    read_sweep_csv,
    sweep,
    tikhonov_cg_shifted,
    tikhonov_direct,
    tikhonov_spectral,
    write_sweep_csv,
)


def diag_problem(s, y):
    return ProblemInstance(operator=DiagonalOperator(s), y_noisy=np.asarray(y, dtype=float))


def dense_problem(a, y):
    return ProblemInstance(operator=DenseOperator(a), y_noisy=np.asarray(y, dtype=float))


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def random3020():
    r = np.random.default_rng(2024)
    a = r.standard_normal((30, 20))
    a /= np.linalg.norm(a, 2)
    return dense_problem(a, r.standard_normal(30))


def test_grid():
    g = AlphaGrid()
    v = g.values
    assert v.size == 121 and v[0] == 1.0
    assert v[-1] == pytest.approx(1e-12, rel=1e-12)
    assert np.all(np.diff(v) < 0)
    assert AlphaGrid.spanning(1e-2, 1e-8).values.size == 61
    for bad in (dict(q=1.0), dict(q=0.0), dict(alpha0=0.0), dict(steps=0)):
        with pytest.raises(SolverError):
            AlphaGrid(**bad)


def test_spectral_examples():
    t = tikhonov_spectral(diag_problem([1.0], [1.0]), 1.0)
    assert t.x[0] == 0.5 and t.residual_norm == 0.5
    t = tikhonov_spectral(diag_problem([1.0, 0.5], [1.0, 1.0]), 1.0)
    assert np.allclose(t.x, [0.5, 0.4], rtol=1e-15)
    assert t.residual_norm == pytest.approx(np.sqrt(0.25 + 0.64), rel=1e-15)
    with pytest.raises(SolverError):
        tikhonov_spectral(diag_problem([1.0], [1.0]), 0.0)
    with pytest.raises(SolverError):
        tikhonov_spectral(dense_problem(np.eye(2), [1, 1]), 1.0)


def test_spectral_against_mpmath():
    p = make_model_problem(2, 2, n=3)
    for alpha in (1.0, 1e-3, 1e-9):
        ref = spectral_residual(p.operator.singular_values, p.y_noisy, alpha)
        assert tikhonov_spectral(p, alpha).residual_norm == pytest.approx(float(ref), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.6, 3), st.floats(0.3, 3), st.floats(-12, 0))
def test_spectral_first_order_identity(eta, beta, log_alpha):
    p = make_model_problem(eta, beta, n=200)
    t = tikhonov_spectral(p, 10.0**log_alpha)
    assert t.gradient_norm / (t.alpha * t.solution_norm) == pytest.approx(1.0, abs=1e-12)


def test_cg_matches_spectral_on_model_n3():
    p = make_model_problem(2, 2, n=3)
    d = dense_problem(np.diag(p.operator.singular_values), p.y_noisy)
    g = AlphaGrid()
    for cg, al in zip(tikhonov_cg_shifted(d, g), g.values):
        assert rel(cg.x, tikhonov_spectral(p, al).x) <= 1e-8


def test_cg_matches_gaussian_elimination(random3020):
    p = random3020
    a = p.operator.matrix
    for al in (1.0, 1e-2, 1e-4):
        x_ref, r_ref, g_ref = tikhonov_dense(a, p.y_noisy, al)
        x_ref = np.array([float(v) for v in x_ref])
        (cg,) = tikhonov_cg_shifted(p, [al])
        assert rel(cg.x, x_ref) <= 1e-8
        assert cg.residual_norm == pytest.approx(float(r_ref), rel=1e-8)
        assert cg.gradient_norm == pytest.approx(float(g_ref), rel=1e-8)


def test_cg_matches_direct_all_shifts(random3020):
    g = AlphaGrid()
    for cg, al in zip(tikhonov_cg_shifted(random3020, g), g.values):
        assert rel(cg.x, tikhonov_direct(random3020, al, refine=True).x) <= 1e-8


def test_large_shift():
    r = np.random.default_rng(5)
    a = r.standard_normal((12, 8))
    p = dense_problem(a / np.linalg.norm(a, 2), r.standard_normal(12))
    (t,) = tikhonov_cg_shifted(p, [1e6])
    aty = p.operator.matrix.T @ p.y_noisy
    assert rel(t.x, aty / 1e6) <= 1e-5
    assert t.iterations <= 2


def test_single_point_grid(random3020):
    s = sweep(random3020, AlphaGrid(1e-3, 0.5, 1))
    assert len(s) == 1
    assert rel(s.points[0].x, tikhonov_direct(random3020, 1e-3).x) <= 1e-8


def test_non_convergence_is_reported(random3020):
    with pytest.raises(ConvergenceError) as info:
        tikhonov_cg_shifted(random3020, AlphaGrid(), maxit=2, refine=False)
    bad = info.value.unconverged
    assert bad and set(bad) <= set(AlphaGrid().values.tolist())
    assert AlphaGrid().values[-1] in bad
    assert len(info.value.results) == 121


def test_cg_input_validation(random3020):
    with pytest.raises(SolverError):
        tikhonov_cg_shifted(random3020, AlphaGrid(), tol=0)
    with pytest.raises(SolverError):
        tikhonov_cg_shifted(diag_problem([1.0], [1.0]), AlphaGrid())


def test_zero_data(random3020):
    from dataclasses import replace

    p = replace(random3020, y_noisy=np.zeros(30))
    for t in tikhonov_cg_shifted(p, AlphaGrid(steps=5)):
        assert t.solution_norm == 0 and t.residual_norm == 0


def check_sweep_invariants(s, ynorm, tol=1e-9):
    a, r, xn, gn = s.alphas, s.residuals, s.xnorms, s.gradnorms
    assert np.all(np.diff(a) < 0)
    # decreasing alpha: residual nonincreasing, solution norm nondecreasing
    assert np.all(np.diff(r) <= tol)
    assert np.all(np.diff(xn) >= -tol)
    assert np.all(r <= ynorm + tol)
    slopes = np.diff(np.log(r)) / np.diff(np.log(a))
    assert np.all(slopes >= -1e-6) and np.all(slopes <= 1 + 1e-6)
    assert np.all(np.abs(gn - a * xn) <= np.maximum(1e-10, 10 * 1e-10) * gn)


def test_sweep_invariants_spectral(sweep_clean22, sweep_noisy22, model22, noisy22):
    check_sweep_invariants(sweep_clean22, model22.ynorm)
    check_sweep_invariants(sweep_noisy22, noisy22.ynorm)


def test_sweep_invariants_dense(random3020):
    check_sweep_invariants(sweep(random3020), random3020.ynorm)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 25), st.integers(2, 15))
def test_cg_equals_direct_random(seed, m, n):
    r = np.random.default_rng(seed)
    a = r.standard_normal((m, n))
    p = dense_problem(a / np.linalg.norm(a, 2), r.standard_normal(m))
    g = AlphaGrid(1.0, 0.1, 13)
    for cg, al in zip(tikhonov_cg_shifted(p, g), g.values):
        ref = tikhonov_direct(p, al, refine=True)
        assert rel(cg.x, ref.x) <= 1e-8
        assert abs(cg.gradient_norm - al * cg.solution_norm) <= 1e-8 * al * cg.solution_norm


def test_model_noise_free_residual_strictly_decreasing(sweep_clean22):
    assert np.all(np.diff(sweep_clean22.residuals) < 0)


def test_noisy_plateau(sweep_noisy22, noisy22):
    d = noisy22.delta_true
    inside = (sweep_noisy22.residuals >= 0.8 * d) & (sweep_noisy22.residuals <= 1.2 * d)
    best, run = 0, 0
    for v in inside:
        run = run + 1 if v else 0
        best = max(best, run)
    assert (best - 1) / 10 >= 3


def test_sweep_csv_round_trip(tmp_path, sweep_noisy22):
    path = tmp_path / "s.csv"
    write_sweep_csv(sweep_noisy22, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,residual,xnorm,gradnorm" and len(lines) == 122
    back = read_sweep_csv(path)
    for name in ("alphas", "residuals", "xnorms", "gradnorms"):
        assert np.array_equal(getattr(back, name), getattr(sweep_noisy22, name))
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SolverError):
        read_sweep_csv(path)
