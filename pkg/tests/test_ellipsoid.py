import itertools
import math

import numpy as np
import pytest

from wpmec.errors import ValidationError
from wpmec.solvers.dual_solver import DualPoint, DualProblem
from wpmec.solvers.ellipsoid import (CutOracleResult, Ellipsoid, default_max_iter, dual_upper_bounds,
                                     initial_ellipsoid_box, initial_ellipsoid_for_d1, run)


def quadratic_oracle(c):
    c = np.asarray(c, dtype=float)

    def oracle(x):
        return CutOracleResult(kind="objective", gradient=2.0 * (x - c), value=float(np.sum((x - c) ** 2)))

    return oracle


def inside(E, x):
    d = (np.asarray(x) - E.center) / E.scale
    return float(d @ np.linalg.solve(E.P, d)) <= 1.0 + 1e-9


def test_cut_oracle_result_validation():
    with pytest.raises(ValidationError):
        CutOracleResult(kind="other", gradient=[1.0])
    with pytest.raises(ValidationError):
        CutOracleResult(kind="objective", gradient=[1.0])
    with pytest.raises(ValidationError):
        CutOracleResult(kind="feasibility", gradient=[np.inf])


def test_ellipsoid_rejects_bad_shape():
    with pytest.raises(ValidationError):
        Ellipsoid(center=[0.0, 0.0], P=-np.eye(2))
    with pytest.raises(ValidationError):
        Ellipsoid(center=[0.0, 0.0], P=np.eye(3))


@pytest.mark.parametrize("n", [2, 3, 5])
def test_cut_shrinks_volume_and_keeps_halfspace(n):
    rng = np.random.default_rng(n)
    E = Ellipsoid(center=rng.standard_normal(n), P=np.eye(n) * 4.0, scale=rng.uniform(0.5, 2.0, n))
    g = rng.standard_normal(n)
    E_new = E.cut(g)
    ratio = math.sqrt(np.linalg.det(E_new.P) / np.linalg.det(E.P))
    assert ratio <= math.exp(-1.0 / (2 * (n + 1))) + 1e-12

    kept = 0
    for _ in range(500):
        d = rng.standard_normal(n)
        d *= rng.uniform() ** (1.0 / n) / math.sqrt(d @ np.linalg.solve(E.P, d))
        x = E.center + d * E.scale
        if inside(E, x) and g @ (x - E.center) <= 0:
            kept += 1
            assert inside(E_new, x)
    assert kept > 0


def test_cut_rejects_zero_gradient():
    with pytest.raises(ValidationError):
        Ellipsoid.ball([0.0, 0.0], 1.0).cut(np.zeros(2))


def test_run_minimises_a_quadratic():
    c = np.array([0.3, -1.2, 2.0])
    result = run(quadratic_oracle(c), Ellipsoid.ball(np.zeros(3), 10.0), tol=1e-8)
    point, value, iterations, status = result
    assert status == "converged"
    assert np.allclose(point, c, atol=1e-3)
    assert value <= 1e-6
    assert result.lower_bound <= value
    assert result.history == sorted(result.history, reverse=True)


def test_run_in_one_dimension_halves_the_interval():
    result = run(lambda x: CutOracleResult("objective", np.sign(x - 0.3) + (x == 0.3), float(abs(x[0] - 0.3))),
                 Ellipsoid.ball([0.0], 4.0), tol=1e-9)
    assert result.best_point[0] == pytest.approx(0.3, abs=1e-6)


def test_run_respects_feasibility_cuts():
    def oracle(x):
        if x[0] < 1.0:
            return CutOracleResult(kind="feasibility", gradient=[-1.0, 0.0])
        return CutOracleResult(kind="objective", gradient=2.0 * x, value=float(x @ x))

    result = run(oracle, Ellipsoid.ball([3.0, 3.0], 5.0), tol=1e-7)
    assert result.best_point[0] >= 1.0
    assert result.best_value == pytest.approx(1.0, abs=1e-3)


def test_run_without_feasible_center_is_infeasible():
    result = run(lambda x: CutOracleResult(kind="feasibility", gradient=[1.0, 1.0]),
                 Ellipsoid.ball([0.0, 0.0], 1.0), max_iter=50)
    assert result.best_point is None
    assert result.status == "infeasible"


def test_default_max_iter():
    assert default_max_iter(4, 1e-5) == 10 * 16 * 12
    with pytest.raises(ValidationError):
        run(quadratic_oracle([0.0]), Ellipsoid.ball([0.0], 1.0), tol=0.0)


def test_dual_box_for_reference_instance(reference_k1):
    channels, profiles, cfg = reference_k1
    ub = dual_upper_bounds(channels, profiles, cfg)
    U = 1e4 + 2e5
    assert ub[1] == pytest.approx(U / cfg.T)
    assert ub[2] == pytest.approx(U / cfg.energy_budget)
    assert ub[3] == pytest.approx(1.0)
    assert ub[0] <= ub[2] / (cfg.T * cfg.eta * 5e-6) * (1 + 1e-12)


def test_initial_ellipsoid_has_feasible_center_and_covers_box(make_instance):
    channels, profiles, cfg = make_instance(K=3, N=2, seed=5)
    E = initial_ellipsoid_for_d1(channels, profiles, cfg)
    assert DualProblem(channels, profiles, cfg).feasibility(DualPoint.from_vector(E.center))[0]
    ub = dual_upper_bounds(channels, profiles, cfg)
    for corner in itertools.product(*[(0.0, u) for u in ub]):
        assert inside(E, np.array(corner))


def test_dual_box_needs_energy(make_instance):
    channels, profiles, cfg = make_instance(K=1, N=1, P_max=0.0)
    with pytest.raises(ValidationError):
        dual_upper_bounds(channels, profiles, cfg)


def test_initial_ellipsoid_box_centre():
    E = initial_ellipsoid_box(np.array([2.0, 4.0]))
    assert np.allclose(E.center, [1.0, 2.0])
    assert inside(E, [2.0, 4.0]) and inside(E, [0.0, 0.0])
