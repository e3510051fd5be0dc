"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed as they run
and repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from conftest import record_acceptance, smooth_field
from critlevel.bubbles import (
    BubbleSpec,
    adjudicate_limit,
    estimate_sobolev_constant,
    sobolev_constant,
    sobolev_grid,
    talenti_profile,
    talenti_slope,
)
from critlevel.cli import main
from critlevel.functionals import (
    PerturbationKind,
    ProblemSpec,
    eval_I,
    eval_J,
    eval_P,
    gateaux_residual,
    sample_admissible_system,
)
from critlevel.grid import build_radial_grid
from critlevel.nehari import exponent_identities, project_system, t0_scalar
from critlevel.psdiag import build_noncompact_ps, ps_check
from critlevel.solver import (
    SolveConfig,
    critical_level_scalar,
    holder_lower_bound,
    minimize_on_refinements,
    minimize_scalar_nehari,
    equal_exponent_level,
)


def verdict(number, ok, detail):
    record_acceptance(number, ok, detail)
    assert ok, detail


def quad_sobolev_oracle(dim, p):
    """Sobolev quotient of the extremal profile by adaptive quadrature on [0, inf)."""
    ps = dim * p / (dim - p)
    area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    pts = [1.0, 10.0, 100.0]

    def integral(f):
        a, _ = quad(lambda r: area * r ** (dim - 1) * f(r), 0, 100, points=pts, limit=500, epsrel=1e-13)
        b, _ = quad(lambda r: area * r ** (dim - 1) * f(r), 100, math.inf, limit=500, epsrel=1e-13)
        return a + b

    G = integral(lambda r: abs(talenti_slope(r, 1.0, dim, p)) ** p)
    C = integral(lambda r: talenti_profile(r, 1.0, dim, p) ** ps)
    return G / C ** (p / ps)


def test_criterion_1_sobolev_constant():
    oracle = quad_sobolev_oracle(3, 2.0)
    t = time.perf_counter()
    g = sobolev_grid(3)
    vals = [estimate_sobolev_constant(BubbleSpec(eps, g.radius / 2, g), ProblemSpec(3, 2.0)).value
            for eps in (1.0, 0.25, 0.0625)]
    elapsed = time.perf_counter() - t
    err = abs(vals[0] / oracle - 1)
    spread = max(vals) / min(vals) - 1
    ok = err < 1e-3 and spread < 5e-3 and elapsed < 10
    verdict(1, ok, f"S={vals[0]:.6f} oracle={oracle:.6f} rel.err={err:.2e} spread={spread:.2e} "
                   f"time={elapsed:.2f}s")


def test_criterion_2_brezis_nirenberg_recovery():
    S = sobolev_constant(3, 2.0).value
    g = build_radial_grid(3, 1.0, 501, 4.0)
    spec = ProblemSpec(3, 2.0, lam=2.0, perturbation_f=PerturbationKind.linear())
    rep = critical_level_scalar(spec, g)
    target = S**1.5 / 3
    ok = rep.inf_J_lambda == 0.0 and rep.c_star == target and rep.sobolev_constant == S
    verdict(2, ok, f"c*={rep.c_star:.10f} (1/N)S^(N/2)={target:.10f} second summand={rep.inf_J_lambda}")


TRIPLES = [ProblemSpec(5, 2.0, 2.0, 2 / 3, 2 / 3), ProblemSpec(4, 2.0, 2.0, 1.5, 0.5),
           ProblemSpec(3, 1.5, 1.5, 0.75, 0.25)]


def test_criterion_3_equal_exponent_level():
    conf = SolveConfig(max_iterations=400)
    lines, ok = [], True
    for spec in TRIPLES:
        S = sobolev_constant(spec.dim, spec.p).value
        prop = equal_exponent_level(spec, S)
        hold = holder_lower_bound(spec, S, S)
        grids = [build_radial_grid(spec.dim, 1.0, m, 4.0) for m in (251, 501, 1001)]
        energies = [pt.energy for pt in minimize_on_refinements(spec, grids, conf, system=True)]
        above = all(e >= prop * (1 - 1e-9) for e in energies)
        gap = energies[-1] / prop - 1
        ok &= abs(hold / prop - 1) <= 1e-12 and above and gap < 0.02
        lines.append(f"N={spec.dim},p={spec.p:g}: |H/P-1|={abs(hold / prop - 1):.1e} gap={gap:.2e}")
    verdict(3, ok, "; ".join(lines))


def test_criterion_4_exponent_identities():
    rng = np.random.default_rng(2024)
    t = time.perf_counter()
    worst_lf = worst_k = 0.0
    min_gap = math.inf
    for _ in range(1000):
        ids = exponent_identities(sample_admissible_system(rng), ell=float(rng.uniform(0.1, 10.0)))
        worst_lf = max(worst_lf, ids["level_factor_error"])
        worst_k = max(worst_k, ids["k_collapse_error"])
        min_gap = min(min_gap, ids["r_gap"])
    elapsed = time.perf_counter() - t
    ok = worst_lf <= 1e-12 and worst_k <= 1e-12 and min_gap > 0 and elapsed < 1
    verdict(4, ok, f"max level-factor err={worst_lf:.1e} max K err={worst_k:.1e} "
                   f"min(r-p)={min_gap:.3g} time={elapsed:.2f}s")


def _fd_partials(spec, u, v, s, t, h=1e-6):
    ds = (eval_I(spec, (s * (1 + h)) * u, t * v) - eval_I(spec, (s * (1 - h)) * u, t * v)) / (2 * h)
    dt = (eval_I(spec, s * u, (t * (1 + h)) * v) - eval_I(spec, s * u, (t * (1 - h)) * v)) / (2 * h)
    scale = abs(eval_I(spec, s * u, t * v)) + eval_P(spec, s * u)
    return max(abs(ds), abs(dt)) / scale


def test_criterion_5_nehari_projections():
    rng = np.random.default_rng(5)
    g3 = build_radial_grid(3, 1.0, 200, 2.0)
    g4 = build_radial_grid(4, 1.0, 200, 2.0)
    scalar = ProblemSpec(3, 2.0)
    worst_t = worst_ray = worst_fd = 0.0
    for _ in range(100):
        u = smooth_field(g3, rng)
        t0 = t0_scalar(scalar, u)
        res = minimize_scalar(lambda t: -eval_J(scalar, t * u), bounds=(1e-3 * t0, 10 * t0),
                              method="bounded", options={"xatol": 1e-12})
        worst_t = max(worst_t, abs(res.x / t0 - 1))
        c = float(rng.uniform(0.1, 10.0))
        worst_ray = max(worst_ray, abs(t0_scalar(scalar, c * u) * c / t0 - 1))
    system = ProblemSpec(4, 2.0, 3.0, 2.5, 0.5)
    for _ in range(100):
        u, v = smooth_field(g4, rng), smooth_field(g4, rng)
        pt = project_system(system, u, v)
        worst_fd = max(worst_fd, _fd_partials(system, u, v, *pt.scalings))
        a, b = rng.uniform(0.2, 5.0, size=2)
        moved = project_system(system, a * u, b * v)
        worst_ray = max(worst_ray, float(np.max(np.abs(moved.u.values - pt.u.values)) / np.max(np.abs(pt.u.values))),
                        float(np.max(np.abs(moved.v.values - pt.v.values)) / np.max(np.abs(pt.v.values))))
    ok = worst_t < 1e-6 and worst_fd < 1e-6 and worst_ray < 1e-10
    verdict(5, ok, f"t0 vs optimizer={worst_t:.1e} system FD partials={worst_fd:.1e} ray={worst_ray:.1e}")


def test_criterion_6_gateaux_vs_finite_differences():
    rng = np.random.default_rng(6)
    g = build_radial_grid(4, 1.0, 300, 2.0)
    h = 1e-5
    worst = 0.0
    for p in (1.5, 2.0, 3.0):
        spec = ProblemSpec(4, p, lam=0.8, perturbation_f=PerturbationKind.power(1.5))
        for _ in range(50):
            u, d = smooth_field(g, rng), smooth_field(g, rng)
            fd = (eval_J(spec, u + h * d) - eval_J(spec, u - h * d)) / (2 * h)
            worst = max(worst, abs(gateaux_residual(spec, u, d) / fd - 1))
    verdict(6, worst < 1e-4, f"max relative error={worst:.1e} over 150 fields")


def test_criterion_7_noncompact_ps_demo():
    t = time.perf_counter()
    spec = ProblemSpec(5, 2.0, lam=0.01, perturbation_f=PerturbationKind.power(1.5))
    g = build_radial_grid(5, 8.0, 2000, 4.0)
    conf = SolveConfig()
    rep = critical_level_scalar(spec, g, conf)
    base = minimize_scalar_nehari(spec, g, conf)
    ns = [2, 4, 8, 16, 32]
    seq = build_noncompact_ps(spec, base, BubbleSpec(1.0, 4.0, g), ns)
    ps = ps_check(spec, seq, rep.c_star, weak_limit=base.u, labels=ns)
    elapsed = time.perf_counter() - t
    gap = abs(ps.levels[-1] / rep.c_star - 1)
    falling = all(b < a for a, b in zip(ps.bl_defects, ps.bl_defects[1:]))
    ok = gap < 0.02 and ps.concentration[-1] > 0.9 and falling and elapsed < 60
    verdict(7, ok, f"level gap at n=32={gap:.1e} mass in B(0.1R)={ps.concentration[-1]:.4f} "
                   f"BL defects decreasing={falling} verdict={ps.verdict} time={elapsed:.1f}s")


def test_criterion_8_limit_adjudication():
    lines, ok = [], True
    for dim, p in ((3, 2.0), (5, 2.0), (3, 1.5)):
        g = build_radial_grid(dim, 64.0, 4000, 4.0)
        rep = adjudicate_limit(BubbleSpec(1.0, 32.0, g), ProblemSpec(dim, p))
        gap = rep.candidates["S_p^(N/p)"]["relative_gap"]
        ok &= rep.match == "S_p^(N/p)" and gap < 0.01
        lines.append(f"N={dim},p={p:g}: {rep.match} gap={gap:.1e}")
    verdict(8, ok, "; ".join(lines))


SMALL = ["--set", "grid.nodes=400", "--set", "solve.max_iterations=200"]
SUBCOMMANDS = [
    ["ground-state", *SMALL],
    ["critical-level", *SMALL],
    ["sobolev"],
    ["bubble-diag"],
    ["ps-demo"],
    ["sweep", *SMALL],
    ["identities"],
]


def test_criterion_9_determinism(tmp_path):
    differing = []
    for args in SUBCOMMANDS:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / args[0] / run
            code = main([args[0], "--output-dir", str(out), *args[1:]])
            outs.append((code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
        if outs[0] != outs[1] or not outs[0][1]:
            differing.append(args[0])
    verdict(9, not differing, f"{len(SUBCOMMANDS)} subcommands run twice; differing outputs: {differing or 'none'}")
