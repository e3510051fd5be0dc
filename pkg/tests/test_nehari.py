import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from conftest import smooth_field
from critlevel.errors import AdmissibilityError, ProjectionError
from critlevel.functionals import (
    PerturbationKind,
    ProblemSpec,
    eval_I,
    eval_J,
    eval_P,
    gateaux_residual,
    power_integral,
    sample_admissible_system,
)
from critlevel.grid import Field, build_radial_grid
from critlevel.nehari import (
    SCALAR_TOL,
    exponent_identities,
    fiber_critical_points,
    fiber_map,
    k_from_moments,
    k_functional,
    level_factor,
    project_scalar,
    project_system,
    r_exponent,
    s0_t0,
    scalar_fiber,
    system_fiber,
    t0_scalar,
)

SYS = ProblemSpec(4, 2.0, 3.0, 2.5, 0.5)


@pytest.fixture(scope="module")
def grid4():
    return build_radial_grid(4, 1.0, 300, 2.0)


# -- scalar fibers --------------------------------------------------------------

def test_fiber_map_shape(grid3):
    s = ProblemSpec(3, 2.0)
    u = smooth_field(grid3, np.random.default_rng(0))
    P, C = eval_P(s, u), power_integral(u, 6.0)
    for t, e in fiber_map(s, u, [0.0, 0.3, 1.7]):
        assert e == pytest.approx(t**2 * P / 2 - t**6 * C / 6, rel=1e-12, abs=1e-300)
    with pytest.raises(ValueError):
        fiber_map(s, u, [])


def test_balanced_field_has_unit_scaling(grid3):
    s = ProblemSpec(3, 2.0)
    u = smooth_field(grid3, np.random.default_rng(1))
    u = t0_scalar(s, u) * u
    assert eval_P(s, u) == pytest.approx(power_integral(u, 6.0), rel=1e-12)
    assert t0_scalar(s, u) == pytest.approx(1.0, rel=1e-12)
    best = minimize_scalar(lambda t: -eval_J(s, t * u), bracket=(0.5, 1.0, 1.5),
                           method="golden", tol=1e-12)
    assert best.x == pytest.approx(1.0, abs=1e-8)


def test_t0_ray_invariance(grid3):
    s = ProblemSpec(3, 1.7)
    u = smooth_field(grid3, np.random.default_rng(2))
    w = t0_scalar(s, u) * u
    for c in (0.1, 3.0, 10.0):
        wc = t0_scalar(s, c * u) * (c * u)
        assert np.allclose(wc.values, w.values, rtol=1e-12, atol=0)


@pytest.mark.parametrize("seed", range(5))
def test_t0_matches_optimizer(seed, grid3):
    s = ProblemSpec(3, 2.0)
    u = smooth_field(grid3, np.random.default_rng(seed))
    t0 = t0_scalar(s, u)
    res = minimize_scalar(lambda t: -eval_J(s, t * u), bounds=(1e-3 * t0, 10 * t0),
                          method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx(t0, rel=1e-6)


def test_zero_field_has_no_projection(grid3):
    s = ProblemSpec(3, 2.0)
    with pytest.raises(ProjectionError):
        t0_scalar(s, Field.zeros(grid3))
    with pytest.raises(ProjectionError):
        project_scalar(s, Field.zeros(grid3))


@given(seed=st.integers(0, 10**6), p=st.floats(1.3, 2.8))
def test_scalar_fiber_stationary_at_t0(seed, p, grid3):
    s = ProblemSpec(3, p)
    u = smooth_field(grid3, np.random.default_rng(seed))
    fib = scalar_fiber(s, u)
    t = t0_scalar(s, u)
    assert abs(fib.derivative(t)) * t <= 1e-8 * t**p * fib.P


def test_projection_with_perturbation_is_stationary(grid3):
    s = ProblemSpec(3, 2.0, lam=0.5, perturbation_f=PerturbationKind.power(4.0))
    u = smooth_field(grid3, np.random.default_rng(7))
    pt = project_scalar(s, u)
    assert pt.converged and abs(pt.residuals[0]) < SCALAR_TOL
    w = pt.u
    assert abs(gateaux_residual(s, w, w)) <= 1e-8 * eval_P(s, w)


def test_concave_perturbation_branches(grid3):
    # sublinear term: the fiber has a local minimum (negative energy) and a local maximum
    s = ProblemSpec(3, 2.0, lam=0.05, perturbation_f=PerturbationKind.power(1.5))
    u = smooth_field(grid3, np.random.default_rng(8))
    ts = fiber_critical_points(scalar_fiber(s, u))
    assert len(ts) == 2
    low = project_scalar(s, u, branch="lowest")
    high = project_scalar(s, u, branch="highest")
    assert low.energy < 0 < high.energy
    assert low.scalings[0] == pytest.approx(ts[0]) and high.scalings[0] == pytest.approx(ts[1])


def test_linear_perturbation_beyond_threshold_fails(grid3):
    u = Field.from_function(grid3, lambda r: np.cos(np.pi * r / 2))
    s = ProblemSpec(3, 2.0, lam=100.0, perturbation_f=PerturbationKind.linear())
    with pytest.raises(ProjectionError):
        project_scalar(s, u)


def test_nehari_point_json(grid3):
    s = ProblemSpec(3, 2.0)
    pt = project_scalar(s, smooth_field(grid3, np.random.default_rng(1)))
    d = json.loads(pt.to_json())
    assert d["energy"] == pt.energy and d["converged"]


# -- system ---------------------------------------------------------------------------

@pytest.mark.parametrize("spec,r", [
    (ProblemSpec(3, 2.0, 2.0, 3.5, 0.5), 18.0),
    (ProblemSpec(3, 2.0, 2.0, 4.0, 0.0), 10.0),
    (ProblemSpec(4, 2.0, 3.0, 2.5, 0.5), 7.0),
])
def test_r_exponent_examples(spec, r):
    assert r_exponent(spec) == pytest.approx(r, rel=1e-14)


def test_r_exponent_rejects_large_beta():
    with pytest.raises(AdmissibilityError):
        r_exponent(ProblemSpec(3, 2.0, 2.0, 3.0, 1.0))


def _fd_partials(spec, u, v, s, t, h=1e-6):
    ds = (eval_I(spec, (s * (1 + h)) * u, t * v) - eval_I(spec, (s * (1 - h)) * u, t * v)) / (2 * h)
    dt = (eval_I(spec, s * u, (t * (1 + h)) * v) - eval_I(spec, s * u, (t * (1 - h)) * v)) / (2 * h)
    scale = abs(eval_I(spec, s * u, t * v)) + eval_P(spec, s * u)
    return ds / scale, dt / scale


@pytest.mark.parametrize("seed", range(5))
def test_system_projection_stationary(seed, grid4):
    rng = np.random.default_rng(seed)
    u, v = smooth_field(grid4, rng), smooth_field(grid4, rng)
    pt = project_system(SYS, u, v)
    s, t = pt.scalings
    assert pt.converged
    assert max(abs(x) for x in _fd_partials(SYS, u, v, s, t)) < 1e-6


def test_system_ray_invariance(grid4):
    rng = np.random.default_rng(11)
    u, v = smooth_field(grid4, rng), smooth_field(grid4, rng)
    ref = project_system(SYS, u, v)
    for a in (0.5, 2.0):
        for b in (0.5, 2.0):
            pt = project_system(SYS, a * u, b * v)
            assert np.allclose(pt.u.values, ref.u.values, rtol=1e-10, atol=0)
            assert np.allclose(pt.v.values, ref.v.values, rtol=1e-10, atol=0)
            assert pt.energy == pytest.approx(ref.energy, rel=1e-10)


def test_symmetric_pair_symmetric_scalings():
    g = build_radial_grid(5, 1.0, 300, 2.0)
    s = ProblemSpec(5, 2.0, 2.0, 2 / 3, 2 / 3)
    u = smooth_field(g, np.random.default_rng(12))
    pt = project_system(s, u, u)
    assert pt.scalings[0] == pytest.approx(pt.scalings[1], rel=1e-10)


def test_disjoint_supports_rejected(grid4):
    x = grid4.nodes
    u = Field(grid4, np.where(x < 0.3, (0.3 - x), 0.0))
    v = Field(grid4, np.where(x > 0.5, (1 - x) * (x - 0.5), 0.0))
    with pytest.raises(ProjectionError, match="vanishes"):
        project_system(SYS, u, v)
    with pytest.raises(ProjectionError):
        project_system(SYS, u, Field.zeros(grid4))


def test_system_projection_with_perturbations(grid4):
    s = ProblemSpec(4, 2.0, 3.0, 2.5, 0.5, lam=0.2, mu=0.1,
                    perturbation_f=PerturbationKind.power(3.0), perturbation_g=PerturbationKind.power(4.0))
    rng = np.random.default_rng(13)
    u, v = smooth_field(grid4, rng), smooth_field(grid4, rng)
    pt = project_system(s, u, v)
    assert pt.converged
    fib = system_fiber(s, u, v)
    rs = fib.relative_residuals(*pt.scalings)
    assert max(abs(x) for x in rs) < 1e-10


def test_k_functional_matches_projected_energy(grid4):
    rng = np.random.default_rng(14)
    for _ in range(5):
        u, v = smooth_field(grid4, rng), smooth_field(grid4, rng)
        pt = project_system(SYS, u, v)
        assert level_factor(SYS) * k_functional(SYS, u, v) == pytest.approx(pt.energy, rel=1e-8)


@given(ell=st.floats(0.01, 1e4))
def test_k_collapse(ell):
    spec = sample_admissible_system(np.random.default_rng(int(ell * 1000) % 2**32))
    assert k_from_moments(spec, ell, ell, ell) == pytest.approx(ell, rel=1e-12)


def test_exponent_identities_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = sample_admissible_system(rng)
        ids = exponent_identities(spec, ell=2.7)
        assert ids["level_factor_error"] < 1e-14
        assert ids["r_gap"] > 0


@given(alpha=st.floats(3.0, 4.0, exclude_min=True))
def test_equal_exponent_level_factor(alpha):
    # p = q = 2, N = 3: the coupling condition forces alpha + beta + 2 = 6, and beta < 1
    beta = 4.0 - alpha
    spec = ProblemSpec(3, 2.0, 2.0, alpha, beta)
    assert level_factor(spec) == pytest.approx(2.0, rel=1e-12)


def test_s0_t0_formula():
    P, Q, R = 2.0, 5.0, 0.7
    s, t = s0_t0(SYS, P, Q, R)
    coup = s**3.5 * t**1.5 * R
    assert s**2 * P == pytest.approx(coup, rel=1e-12)
    assert t**3 * Q == pytest.approx(coup, rel=1e-12)
