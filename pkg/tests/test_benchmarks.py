import math

import numpy as np
import pytest

from wpmec.errors import ValidationError
from wpmec.model import check_feasibility, objective
from wpmec.solvers.benchmarks import (SchemeId, golden_section_max, solve_isotropic, solve_local_only,
                                      solve_offload_only, solve_scheme)
from wpmec.solvers.fixed_q import solve_fixed_q
from wpmec.solvers.joint import SolverOptions, solve_joint


def test_scheme_parse():
    assert SchemeId.parse("local-only") is SchemeId.LOCAL_ONLY
    assert SchemeId.parse(SchemeId.JOINT) is SchemeId.JOINT
    with pytest.raises(ValidationError):
        SchemeId.parse("greedy")


def test_golden_section_max():
    x, value = golden_section_max(lambda p: -(p - 0.3) ** 2, 0.0, 1.0, rtol=1e-8)
    assert x == pytest.approx(0.3, abs=1e-6)
    x, value = golden_section_max(lambda p: p, 0.0, 2.0)
    assert (x, value) == (2.0, 2.0)


def test_local_only_single_user_closed_form(reference_k1):
    channels, profiles, cfg = reference_k1
    alloc, report = solve_local_only(channels, profiles, cfg)
    assert np.all(alloc.ell == 0) and np.all(alloc.t == 0)
    p = profiles[0]
    expected = min(cfg.T * p.f_max / p.C, (cfg.eta * cfg.P_max * cfg.T ** 4 * 5e-6 / (p.zeta * p.C ** 3)) ** (1 / 3))
    assert alloc.q[0] == pytest.approx(expected, rel=1e-6)
    assert report.primal_objective == pytest.approx(expected, rel=1e-6)


def test_local_only_is_feasible(make_instance):
    channels, profiles, cfg = make_instance(K=3, N=2, seed=2)
    alloc, _ = solve_local_only(channels, profiles, cfg, iterations=100)
    assert np.all(alloc.ell == 0)
    assert check_feasibility(alloc, channels, cfg, profiles).feasible


def test_offload_only_has_no_local_bits(make_instance):
    channels, profiles, cfg = make_instance(K=2, N=2, seed=3)
    alloc, report = solve_offload_only(channels, profiles, cfg)
    assert np.all(alloc.q == 0)
    assert report.scheme == "offload-only"
    assert check_feasibility(alloc, channels, cfg, profiles).feasible


def test_isotropic_uses_scaled_identity(make_instance):
    channels, profiles, cfg = make_instance(K=2, N=3, seed=4)
    alloc, report = solve_isotropic(channels, profiles, cfg)
    assert np.allclose(alloc.Q, np.eye(3) * cfg.energy_budget / 3)
    assert report.relative_gap <= 1e-3
    searched, searched_report = solve_isotropic(channels, profiles, cfg, options=SolverOptions(isotropic_search=True))
    assert objective(searched, cfg) <= objective(alloc, cfg) * (1 + 1e-4)
    assert any("golden-section" in note for note in searched_report.notes)
    assert not any("golden-section" in note for note in report.notes)


def test_fixed_q_rejects_bad_covariance(make_instance):
    channels, profiles, cfg = make_instance(K=2, N=2)
    with pytest.raises(ValidationError):
        solve_fixed_q(np.eye(2) * cfg.energy_budget, channels, profiles, cfg)
    with pytest.raises(ValidationError):
        solve_fixed_q(np.diag([1.0, -0.1]) * 0.1, channels, profiles, cfg)
    alloc, report = solve_fixed_q(np.zeros((2, 2)), channels, profiles, cfg)
    assert objective(alloc, cfg) == 0.0 and report.converged


@pytest.mark.parametrize("seed", [1, 2])
def test_joint_dominates_benchmarks(make_instance, seed):
    channels, profiles, cfg = make_instance(K=3, N=2, seed=seed)
    alloc, report = solve_joint(channels, profiles, cfg)
    assert report.converged
    assert report.relative_gap <= 1e-3
    assert check_feasibility(alloc, channels, cfg, profiles).feasible
    assert report.primal_objective <= report.dual_bound * (1 + 1e-9)

    joint = report.primal_objective
    for scheme in (SchemeId.LOCAL_ONLY, SchemeId.OFFLOAD_ONLY, SchemeId.ISOTROPIC):
        _, bench = solve_scheme(scheme, channels, profiles, cfg)
        assert bench.primal_objective <= joint * (1 + 1e-3) + 1e-6, scheme


def test_joint_without_power_is_trivial(make_instance):
    channels, profiles, cfg = make_instance(K=2, N=2, P_max=0.0)
    alloc, report = solve_joint(channels, profiles, cfg)
    assert objective(alloc, cfg) == 0.0
    assert report.dual_bound == 0.0
    assert "no transmit power" in report.notes


def test_joint_polish_never_hurts(make_instance):
    channels, profiles, cfg = make_instance(K=2, N=2, seed=9)
    _, raw = solve_joint(channels, profiles, cfg, options=SolverOptions(polish=False))
    _, polished = solve_joint(channels, profiles, cfg)
    assert polished.primal_objective >= raw.primal_objective * (1 - 1e-12)
    assert math.isclose(polished.dual_bound, raw.dual_bound, rel_tol=1e-12)
