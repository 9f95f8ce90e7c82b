import csv

import numpy as np
import pytest

from hjb_bdf2.analysis import error_vs_exact, norm
from hjb_bdf2.exceptions import CFLViolationError, InvalidArgumentError, StepFailure
from hjb_bdf2.grid import build_grid_1d, build_grid_2d, build_time_grid
from hjb_bdf2.problem import (
    HJBProblem,
    HJBProblem2D,
    IsaacsProblem,
    controlled_diffusion_problem,
    eikonal_problem,
    heat_problem,
)
from hjb_bdf2.stepper import (
    SolverOptions,
    run_bdf2,
    run_bdf2_2d,
    run_crank_nicolson,
    run_implicit_euler,
    run_isaacs,
    run_scheme,
    write_profile_csv,
)

TIGHT = SolverOptions(tol=1e-12, max_iter=100000)


def _zero(*a):
    return 0.0


def _zero_dynamics():
    return HJBProblem((0,), _zero, _zero, _zero, _zero, lambda x: np.cos(3 * x), lambda t, x: np.cos(3 * x),
                      x_min=0.0, x_max=1.0, horizon=0.5)


@pytest.mark.parametrize("scheme", ["bdf2", "euler", "cn", "bdf2-centered-drift"])
def test_zero_dynamics_is_stationary(scheme):
    p = _zero_dynamics()
    g, tg = build_grid_1d(0, 1, 15), build_time_grid(0.5, 6)
    traj = run_scheme(scheme, p, g, tg)
    assert traj.levels.shape == (7, 15)
    np.testing.assert_allclose(traj.levels, np.broadcast_to(np.cos(3 * g.interior), (7, 15)),
                               rtol=0, atol=1e-14)
    assert len(traj.stats) == 6 and traj.scheme == scheme


def test_unknown_scheme():
    with pytest.raises(InvalidArgumentError):
        run_scheme("rk4", _zero_dynamics(), build_grid_1d(0, 1, 3), build_time_grid(1, 2))


def test_first_level_of_bdf2_is_an_euler_step():
    p = eikonal_problem()
    g, tg = build_grid_1d(-2, 2, 79), build_time_grid(0.2, 8)
    a = run_bdf2(p, g, tg)
    b = run_implicit_euler(p, g, tg)
    np.testing.assert_array_equal(a.levels[1], b.levels[1])
    assert not np.array_equal(a.levels[2], b.levels[2])


def test_eikonal_row_reference_value():
    # ladder row I+1 = 160, N = 80, tau/h = 0.1
    p = eikonal_problem()
    traj = run_bdf2(p, build_grid_1d(-2, 2, 159), build_time_grid(0.2, 80))
    err = error_vs_exact(traj, p.exact, ["inf"])["inf"]
    assert 1e-3 < err < 2e-3
    assert np.max(traj.certificate_ratios) < 1


def _heat_errors(run, ladder):
    p = heat_problem(sigma=1.0, horizon=0.25)
    out = []
    for N, I1 in ladder:
        traj = run(p, build_grid_1d(-1, 1, I1 - 1), build_time_grid(0.25, N), TIGHT)
        out.append(np.max(np.abs(traj.final - p.exact(0.25, traj.grid.interior))))
    return np.array(out)


def test_heat_convergence_orders():
    ladder = [(10, 20), (20, 40), (40, 80)]
    e_bdf2 = _heat_errors(run_bdf2, ladder)
    e_euler = _heat_errors(run_implicit_euler, ladder)
    orders_bdf2 = np.log2(e_bdf2[:-1] / e_bdf2[1:])
    orders_euler = np.log2(e_euler[:-1] / e_euler[1:])
    assert np.all(np.abs(orders_bdf2 - 2) < 0.2)
    assert np.all(np.abs(orders_euler - 1) < 0.2)
    e_cn = _heat_errors(run_crank_nicolson, ladder)
    assert np.all(np.abs(np.log2(e_cn[:-1] / e_cn[1:]) - 2) < 0.2)
    # all three approach the same profile
    assert max(e_bdf2[-1], e_cn[-1]) < 1e-3 and e_euler[-1] < 2e-2


def test_cfl_violation_reports_step():
    p = HJBProblem((0,), _zero, lambda t, x, a: 40.0 * t + 0 * x, _zero, _zero, np.sin, lambda t, x: 0 * x,
                   x_min=0.0, x_max=1.0, horizon=0.5)
    g, tg = build_grid_1d(0, 1, 19), build_time_grid(0.5, 50)
    # b tau / h = 40 t_k * 0.01 / 0.05 = 8 t_k reaches 1.5 at t_k = 0.1875 -> first violation at k = 19
    with pytest.raises(CFLViolationError) as info:
        run_bdf2(p, g, tg)
    assert info.value.step == 19 and info.value.margin <= 0


def test_cfl_ignored_by_crank_nicolson():
    p = eikonal_problem()
    traj = run_crank_nicolson(p, build_grid_1d(-2, 2, 39), build_time_grid(0.2, 2))
    assert traj.levels.shape[0] == 3


def test_non_convergence_wrapped_with_step():
    p = eikonal_problem()
    with pytest.raises(StepFailure) as info:
        run_bdf2(p, build_grid_1d(-2, 2, 199), build_time_grid(0.2, 20), SolverOptions(max_iter=2))
    assert info.value.step == 1


def test_keep_levels_false_stores_endpoints():
    p = eikonal_problem()
    g, tg = build_grid_1d(-2, 2, 79), build_time_grid(0.2, 12)
    full = run_bdf2(p, g, tg)
    lean = run_bdf2(p, g, tg, SolverOptions(keep_levels=False))
    np.testing.assert_array_equal(lean.steps, [0, 12])
    np.testing.assert_array_equal(lean.final, full.final)
    np.testing.assert_array_equal(lean.levels[0], full.levels[0])


def test_warm_start_choices_agree():
    p = controlled_diffusion_problem()
    g, tg = build_grid_1d(-1, 1, 39), build_time_grid(0.5, 10)
    a = run_bdf2(p, g, tg, SolverOptions(tol=1e-12, warm_start="previous"))
    b = run_bdf2(p, g, tg, SolverOptions(tol=1e-12, warm_start="extrapolate"))
    np.testing.assert_allclose(a.final, b.final, atol=1e-11)


def test_h1_bounded_along_ladder():
    p = controlled_diffusion_problem()
    values = []
    for N, I1 in [(1, 20), (2, 40), (4, 80), (8, 160), (16, 320)]:
        traj = run_bdf2(p, build_grid_1d(-1, 1, I1 - 1), build_time_grid(0.5, N))
        values.append(norm(traj.final, "h1", traj.grid.h))
    assert max(values) <= 1.05 * values[0]


def test_comparison_principle_without_drift():
    def make(shift):
        return HJBProblem((0.2, 0.6), lambda t, x, a: a, _zero, _zero, _zero,
                          lambda x: np.sin(np.pi * x) + shift, lambda t, x: shift + 0 * x,
                          x_min=0.0, x_max=1.0, horizon=0.3)

    g, tg = build_grid_1d(0, 1, 49), build_time_grid(0.3, 30)
    lo, hi = run_bdf2(make(0.0), g, tg, TIGHT), run_bdf2(make(0.05), g, tg, TIGHT)
    assert np.all(hi.levels >= lo.levels - 1e-11)


# -- Isaacs ------------------------------------------------------------------------


def _isaacs(sup_controls, inf_controls):
    return IsaacsProblem(sup_controls, inf_controls, lambda t, x, a, b: 0.5 * (a + b), _zero, _zero, _zero,
                         lambda x: np.sin(np.pi * x), lambda t, x: 0 * x, x_min=-1.0, x_max=1.0, horizon=0.5)


def test_isaacs_singleton_inf_is_bit_identical_to_bdf2():
    g, tg = build_grid_1d(-1, 1, 39), build_time_grid(0.5, 10)
    ip = IsaacsProblem((0.1, 0.5), (0.7,), lambda t, x, a, b: a * b, lambda t, x, a, b: 0.3 * b + 0 * x,
                       _zero, _zero, lambda x: np.sin(np.pi * x), lambda t, x: 0 * x,
                       x_min=-1.0, x_max=1.0, horizon=0.5)
    a = run_isaacs(ip, g, tg)
    b = run_bdf2(ip.fix_inf_control(0.7), g, tg)
    assert np.array_equal(a.levels, b.levels)
    assert a.scheme == "isaacs-bdf2"


def test_isaacs_singleton_sup_is_inf_problem():
    g, tg = build_grid_1d(-1, 1, 39), build_time_grid(0.5, 10)
    game = run_isaacs(_isaacs((0.3,), (0.1, 0.5)), g, tg, TIGHT)
    # v solves v_t + inf_b(...) = 0 iff -v solves the sup equation with negated data
    neg = IsaacsProblem((0.1, 0.5), (0,), lambda t, x, b, _: 0.5 * (0.3 + b), _zero, _zero, _zero,
                        lambda x: -np.sin(np.pi * x), lambda t, x: 0 * x, x_min=-1.0, x_max=1.0, horizon=0.5)
    mirrored = run_isaacs(neg, g, tg, TIGHT)
    np.testing.assert_allclose(game.levels, -mirrored.levels, atol=1e-10)


def test_isaacs_envelope():
    g, tg = build_grid_1d(-1, 1, 39), build_time_grid(0.5, 10)
    game = run_isaacs(_isaacs((0.1, 0.5), (0.1, 0.5)), g, tg, TIGHT).final
    # sigma = (a + b)/2 ranges over {0.1, 0.3, 0.5}; v_t = -H, so the all-sup run is the lower envelope
    lower = run_isaacs(_isaacs((0.1, 0.3, 0.5), (0.1,)), g, tg, TIGHT).final
    upper = run_isaacs(_isaacs((0.1,), (0.1, 0.3, 0.5)), g, tg, TIGHT).final
    assert np.all(lower <= game + 1e-10) and np.all(game <= upper + 1e-10)
    assert np.max(upper - lower) > 1e-3


# -- 2D ----------------------------------------------------------------------------


def _problem_2d(s1, s2, b1, initial, boundary, controls=(0,)):
    return HJBProblem2D(controls, lambda t, x, y, a: s1 + 0 * x, lambda t, x, y, a: s2 + 0 * x, _zero,
                        lambda t, x, y, a: b1 + 0 * x, _zero, _zero, _zero, initial, boundary)


def test_2d_zero_dynamics_stationary():
    f = lambda x, y: np.sin(x) * np.cos(y)  # noqa: E731
    p = _problem_2d(0.0, 0.0, 0.0, f, lambda t, x, y: f(x, y))
    traj = run_bdf2_2d(p, build_grid_2d(0, 1, 5, 0, 1, 4), build_time_grid(1.0, 4))
    assert traj.levels.shape == (5, 5, 4)
    np.testing.assert_allclose(traj.levels[-1], traj.levels[0], rtol=0, atol=1e-14)


def test_2d_separable_rows_match_1d():
    f = lambda x: np.sin(np.pi * x) + 0.5 * x  # noqa: E731
    # degenerate y axis: no coupling between grid rows
    p2 = _problem_2d(0.8, 0.0, 0.4, lambda x, y: f(x) + 0 * y, lambda t, x, y: 0.5 * x + 0 * y)
    p1 = HJBProblem((0,), lambda t, x, a: 0.8, lambda t, x, a: 0.4, _zero, _zero, f, lambda t, x: 0.5 * x,
                    x_min=0.0, x_max=1.0)
    tg = build_time_grid(0.2, 10)
    two = run_bdf2_2d(p2, build_grid_2d(0, 1, 19, 0, 1, 6), tg, TIGHT)
    one = run_bdf2(p1, build_grid_1d(0, 1, 19), tg, TIGHT)
    assert two.scheme == "bdf2-2d"
    for j in range(6):
        np.testing.assert_allclose(two.levels[:, :, j], one.levels, atol=1e-10)


def test_2d_transpose_symmetry():
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y) + x * y  # noqa: E731
    p = _problem_2d(0.7, 0.7, 0.0, f, lambda t, x, y: x * y)
    traj = run_bdf2_2d(p, build_grid_2d(0, 1, 11, 0, 1, 11), build_time_grid(0.2, 8), TIGHT)
    for u in traj.levels:
        np.testing.assert_allclose(u, u.T, atol=1e-10)


def test_2d_cfl_per_axis():
    p = _problem_2d(0.0, 0.0, 1.0, lambda x, y: 0 * x, lambda t, x, y: 0 * x)
    g = build_grid_2d(0, 1, 9, 0, 4, 9)  # hx = 0.1, hy = 0.4
    with pytest.raises(CFLViolationError):
        run_bdf2_2d(p, g, build_time_grid(0.2, 1))


# -- profile output ------------------------------------------------------------------


def test_profile_csv(tmp_path):
    p = eikonal_problem()
    traj = run_bdf2(p, build_grid_1d(-2, 2, 19), build_time_grid(0.2, 4))
    path = tmp_path / "profile.csv"
    write_profile_csv(path, traj)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x", "u"] and len(rows) == 20
    assert float(rows[1][0]) == pytest.approx(0.2)
    np.testing.assert_array_equal([float(r[2]) for r in rows[1:]], traj.final)
    write_profile_csv(tmp_path / "k0.csv", traj, k=0)
    rows0 = list(csv.reader((tmp_path / "k0.csv").open()))
    assert float(rows0[1][0]) == 0.0


def test_profile_csv_2d(tmp_path):
    p = _problem_2d(0.0, 0.0, 0.0, lambda x, y: x + y, lambda t, x, y: x + y)
    traj = run_bdf2_2d(p, build_grid_2d(0, 1, 3, 0, 1, 2), build_time_grid(1.0, 2))
    write_profile_csv(tmp_path / "p.csv", traj)
    rows = list(csv.reader((tmp_path / "p.csv").open()))
    assert rows[0] == ["t", "x", "y", "u"] and len(rows) == 7
