import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjb_bdf2.analysis import (
    ConvergenceTable,
    LadderRowError,
    NormKind,
    SmoothFunction,
    consistency_error,
    convergence_table,
    error_vs_exact,
    error_vs_reference,
    ladder,
    m_tau,
    norm,
    observed_order,
    oscillation_metric,
    restrict,
    stability_coefficients,
)
from hjb_bdf2.exceptions import InvalidArgumentError, NonConvergenceError
from hjb_bdf2.fd_ops import assemble_a_matrix
from hjb_bdf2.grid import build_grid_1d, build_time_grid
from hjb_bdf2.problem import HJBProblem, eikonal_problem
from hjb_bdf2.stepper import Trajectory, run_bdf2


def _zero(*a):
    return 0.0


# -- norms -------------------------------------------------------------------------


def test_norm_examples():
    assert norm([1.0, 0.0], NormKind.A_NORM, 1.0) == pytest.approx(math.sqrt(2))
    for kind in NormKind:
        assert norm(np.zeros(5), kind, 0.1) == 0.0
    u = np.array([3.0, -4.0])
    assert norm(u, "euclidean") == 5.0
    assert norm(u, "inf") == 4.0
    assert norm(u, "l2", 0.25) == pytest.approx(2.5)
    assert norm(u, "h1", 0.25) == pytest.approx(0.5 * norm(u, "a_norm", 0.25))
    with pytest.raises(InvalidArgumentError):
        norm(u, "l2")
    with pytest.raises(InvalidArgumentError):
        norm(u, "energy", 1.0)


def test_a_norm_is_quadratic_form():
    rng = np.random.default_rng(0)
    for I in (1, 4, 17):
        h = 1.0 / (I + 1)
        A = assemble_a_matrix(I, h).to_dense()
        u = rng.normal(size=I)
        assert norm(u, "a_norm", h) ** 2 == pytest.approx(u @ A @ u, rel=1e-12)


def test_norm_equivalences_on_unit_domains():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        I = int(rng.integers(1, 60))
        h = 1.0 / (I + 1)
        u = rng.normal(size=I) * rng.uniform(0.01, 100)
        a = norm(u, "a_norm", h)
        assert np.linalg.norm(u) <= 0.5 * a * (1 + 1e-12)
        Au = assemble_a_matrix(I, h).matvec(u)
        assert a <= 0.5 * np.linalg.norm(Au) * (1 + 1e-12)


# -- errors ---------------------------------------------------------------------------


def _traj(levels, grid, T=1.0):
    levels = np.asarray(levels, dtype=float)
    N = levels.shape[0] - 1
    return Trajectory(grid, build_time_grid(T, N), levels, "bdf2", np.arange(N + 1))


def test_error_vs_exact_examples():
    g = build_grid_1d(0, 1, 4)
    exact = lambda t, x: t * x  # noqa: E731
    tg = build_time_grid(1.0, 3)
    levels = np.array([exact(t, g.interior) for t in tg.times])
    errs = error_vs_exact(_traj(levels, g), exact)
    assert errs == {"h1": 0.0, "l2": 0.0, "inf": 0.0}
    levels[2, 1] += 1e-3
    assert error_vs_exact(_traj(levels, g), exact, ["inf"])["inf"] == pytest.approx(1e-3, abs=1e-15)
    # levels before min_step are ignored
    levels[2, 1] -= 1e-3
    levels[1, 0] += 5.0
    assert error_vs_exact(_traj(levels, g), exact)["inf"] == 0.0
    with pytest.raises(InvalidArgumentError):
        error_vs_exact(_traj(levels, g), None)


def test_restrict_and_reference():
    coarse, fine = build_grid_1d(-1, 1, 9), build_grid_1d(-1, 1, 39)
    f = np.sin(fine.interior)
    np.testing.assert_array_equal(restrict(f, fine, coarse), np.sin(coarse.interior))
    ref = _traj([f, f], fine)
    assert error_vs_reference(ref, ref) == {"h1": 0.0, "l2": 0.0, "inf": 0.0}
    t = _traj([np.sin(coarse.interior)] * 2, coarse)
    assert error_vs_reference(t, ref)["inf"] == 0.0
    with pytest.raises(InvalidArgumentError):
        restrict(f, fine, build_grid_1d(-1, 1, 6))
    with pytest.raises(InvalidArgumentError):
        restrict(f, fine, build_grid_1d(-1, 2, 9))


# -- orders and tables -------------------------------------------------------------------


def test_observed_order():
    assert observed_order(4e-3, 1e-3) == pytest.approx(2.0)
    assert observed_order(0.0, 0.0) is None
    assert observed_order(1.0, np.nan) is None
    assert observed_order(4e-3, 1e-16, floor=1e-13) is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-12, 1.0), min_size=2, max_size=6), st.floats(1e-6, 1e6))
def test_order_scale_invariance(errors, scale):
    for a, b in zip(errors, errors[1:]):
        assert observed_order(scale * a, scale * b) == pytest.approx(observed_order(a, b), abs=1e-9)


def test_ladder():
    rungs = ladder(5, 10, 8)
    assert rungs[0] == (5, 10) and rungs[-1] == (640, 1280) and len(rungs) == 8
    assert ladder(1, 20, 9)[-1] == (256, 5120)
    with pytest.raises(InvalidArgumentError):
        ladder(1, 20, 0)


def test_convergence_table_csv():
    errs = {(1, 2): 4e-3, (2, 4): 1e-3, (4, 8): 1e-3}
    table = convergence_table(lambda N, I: (N, I), list(errs),
                              lambda key: {n: errs[key] for n in ("h1", "l2", "inf")})
    lines = table.to_csv().splitlines()
    assert lines[0] == "N,I_plus_1,err_h1,ord_h1,err_l2,ord_l2,err_inf,ord_inf,cpu_s"
    assert lines[1].startswith("1,2,4.00E-03,,4.00E-03,,4.00E-03,,")
    assert lines[2].startswith("2,4,1.00E-03,2.00,")
    assert lines[3].startswith("4,8,1.00E-03,0.00,")
    np.testing.assert_allclose(table.order("l2")[1:], [2.0, 0.0])
    assert table.ok


def test_convergence_table_zero_errors_print_dashes():
    table = convergence_table(lambda N, I: None, [(1, 2), (2, 4)], lambda _: {"h1": 0.0, "l2": 0.0, "inf": 0.0})
    row = table.to_csv().splitlines()[2].split(",")
    assert row[2:8] == ["0.00E+00", "--", "0.00E+00", "--", "0.00E+00", "--"]


def test_convergence_table_failures():
    def runner(N, I):
        if N == 2:
            raise NonConvergenceError("boom")
        return N

    error = lambda N: {"h1": 1.0 / N, "l2": 1.0 / N, "inf": 1.0 / N}  # noqa: E731
    with pytest.raises(LadderRowError) as info:
        convergence_table(runner, [(1, 2), (2, 4), (4, 8)], error)
    assert info.value.row == 1 and info.value.N == 2
    table = convergence_table(runner, [(1, 2), (2, 4), (4, 8)], error, on_error="mark")
    assert not table.ok
    lines = table.to_csv().splitlines()
    assert "FAILED" in lines[2] and lines[3].split(",")[3] == "--"
    with pytest.raises(InvalidArgumentError):
        convergence_table(runner, [(1, 2), (3, 4)], error)


def test_convergence_table_threads_deterministic():
    rungs = ladder(5, 10, 3)
    p = eikonal_problem()

    def runner(N, I1):
        return run_bdf2(p, build_grid_1d(-2, 2, I1 - 1), build_time_grid(0.2, N))

    err = lambda tr: error_vs_exact(tr, p.exact)  # noqa: E731
    a = convergence_table(runner, rungs, err)
    b = convergence_table(runner, rungs, err, threads=3)
    strip = lambda t: [l.rsplit(",", 1)[0] for l in t.to_csv().splitlines()]  # noqa: E731, E741
    assert strip(a) == strip(b)


# -- consistency ------------------------------------------------------------------------


def _flat_problem(source=0.0):
    return HJBProblem((0,), _zero, _zero, _zero, lambda t, x, a: source + 0 * x, _zero, _zero)


def test_consistency_linear_in_time_is_exact():
    phi = SmoothFunction(lambda t, x: t + 0 * x, lambda t, x: 1 + 0 * x, lambda t, x: 0 * x, lambda t, x: 0 * x)
    # dyadic tau keeps the arithmetic exact
    g, tg = build_grid_1d(0, 1, 9), build_time_grid(1.0, 8)
    for k in (2, 5, 8):
        assert np.all(consistency_error("bdf2", phi, _flat_problem(-1.0), g, tg, k) == 0)


def test_consistency_cubic_in_time():
    phi = SmoothFunction(lambda t, x: t**3 + 0 * x, lambda t, x: 3 * t**2 + 0 * x,
                         lambda t, x: 0 * x, lambda t, x: 0 * x)
    g, tg = build_grid_1d(0, 1, 5), build_time_grid(1.0, 8)
    e = consistency_error("bdf2", phi, _flat_problem(), g, tg, 5)
    np.testing.assert_allclose(e, -2 * tg.tau**2, rtol=1e-9)


def test_consistency_quadratic_polynomial_vanishes():
    # phi = t^2 + x^2 with sigma = 1, b = 1: BDF2 in t and x are exact on quadratics
    phi = SmoothFunction(lambda t, x: t**2 + x**2, lambda t, x: 2 * t + 0 * x, lambda t, x: 2 * x,
                         lambda t, x: 2 + 0 * x)
    p = HJBProblem((0,), lambda t, x, a: 1.0, lambda t, x, a: 1.0, _zero, _zero, _zero, _zero)
    e = consistency_error("bdf2", phi, p, build_grid_1d(0, 1, 9), build_time_grid(1.0, 10), 4)
    np.testing.assert_allclose(e, 0.0, atol=1e-11)


def _smooth_problem():
    return HJBProblem(
        (0,),
        lambda t, x, a: 1.0 + 0.25 * np.sin(x),
        lambda t, x, a: 0.5 + 0.25 * np.cos(x),
        lambda t, x, a: 0.1 + 0 * x,
        lambda t, x, a: np.cos(t) * x,
        _zero,
        _zero,
        x_min=0.0,
        x_max=1.0,
    )


def exp_sin():
    return SmoothFunction(lambda t, x: np.exp(-t) * np.sin(x), lambda t, x: -np.exp(-t) * np.sin(x),
                          lambda t, x: np.exp(-t) * np.cos(x), lambda t, x: -np.exp(-t) * np.sin(x))


def consistency_ratios(levels=4):
    p = _smooth_problem()
    errs = []
    for j in range(levels):
        g = build_grid_1d(0, 1, 10 * 2**j - 1)
        tg = build_time_grid(1.0, 10 * 2**j)
        errs.append(max(np.max(np.abs(consistency_error("bdf2", exp_sin(), p, g, tg, k)))
                        for k in range(2, tg.steps + 1)))
    errs = np.array(errs)
    return errs[:-1] / errs[1:]


def test_consistency_second_order():
    ratios = consistency_ratios()
    assert np.all((ratios >= 3.6) & (ratios <= 4.4))


def test_consistency_rejects_early_steps():
    with pytest.raises(InvalidArgumentError):
        consistency_error("bdf2", exp_sin(), _smooth_problem(), build_grid_1d(0, 1, 5), build_time_grid(1, 4), 1)
    with pytest.raises(InvalidArgumentError):
        consistency_error("cn", exp_sin(), _smooth_problem(), build_grid_1d(0, 1, 5), build_time_grid(1, 4), 2)


# -- stability coefficients ------------------------------------------------------------------


def test_stability_coefficients_zero_c():
    sc = stability_coefficients(0.0, 0.1, 10)
    assert sc.lambda1 == 3.0 and sc.lambda2 == 1.0
    p = np.arange(11)
    np.testing.assert_allclose(sc.a, (1 - 3.0 ** -(p + 1)) / 2, rtol=1e-14)
    assert sc.a[0] == pytest.approx(1 / 3) and sc.a[1] == pytest.approx(4 / 9)


@pytest.mark.parametrize("C,tau", [(0.0, 0.5), (1.0, 0.1), (2.0, 0.25), (5.0, 0.05), (10.0, 0.05)])
def test_inverse_is_power_series(C, tau):
    for size in range(1, 9):
        sc = stability_coefficients(C, tau, size - 1)
        inv = np.linalg.inv(m_tau(C, tau, size))
        J = np.eye(size, k=1)
        series = sum(sc.a[q] * np.linalg.matrix_power(J, q) for q in range(size))
        np.testing.assert_allclose(inv, series, rtol=1e-12, atol=1e-14)
        assert sc.inverse_min >= 0.0


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 20.0), st.floats(1e-4, 1.0), st.integers(0, 60))
def test_stability_coefficients_monotone_and_bounded(C, tau, count):
    if C * tau >= 3:
        with pytest.raises(InvalidArgumentError):
            stability_coefficients(C, tau, count)
        return
    sc = stability_coefficients(C, tau, count)
    assert np.all(sc.a >= 0)
    assert np.all(np.diff(sc.a) >= -1e-15)
    if C * tau <= 0.5:
        assert np.all(sc.a <= 1.5 * np.exp(2 * C * count * tau) * (1 + 1e-12))


def test_stability_coefficients_invalid():
    with pytest.raises(InvalidArgumentError):
        stability_coefficients(1.0, 3.0, 4)
    with pytest.raises(InvalidArgumentError):
        stability_coefficients(-1.0, 0.1, 4)


def test_oscillation_metric():
    assert oscillation_metric([0, 1, 0]) == 2.0
    assert oscillation_metric(np.linspace(0, 1, 10)) == pytest.approx(0.0, abs=1e-15)
    assert oscillation_metric([1.0]) == 0.0
