"""Nehari-constrained minimization and the critical levels.

The descent works on the Nehari set directly: at a Nehari point w the
reduced energy u -> J(t(u) u) has gradient J'(w), because the fiber
derivative vanishes there.  Steps are preconditioned by the radial
p-Laplacian stiffness matrix (a discrete Sobolev gradient), damped by
Armijo backtracking, and followed by re-projection.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .bubbles import sobolev_constant, talenti_profile
from .errors import ParameterError, ProjectionError
from .functionals import ProblemSpec, grad_I, grad_J
from .grid import Field, RadialGrid, prolong
from .nehari import NehariPoint, level_factor, project_scalar, project_system, r_exponent

log = logging.getLogger(__name__)

DEFAULT_SEED = 42


@dataclass
class SolveConfig:
    max_iterations: int = 2000
    initial_step: float = 1.0
    shrink: float = 0.5
    slope_fraction: float = 1e-4
    stationarity_tol: float = 1e-7
    initial_field: object = "bump"  # "bump" | "bubble" | "random" | Field | (Field, Field)
    seed: int = DEFAULT_SEED
    bubble_epsilon: float = 0.05
    branch: str = "lowest"
    energy_floor: float = -1e12

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ParameterError("max_iterations must be nonnegative")
        if not (self.initial_step > 0 and self.stationarity_tol > 0 and self.slope_fraction > 0):
            raise ParameterError("step, slope fraction and tolerance must be positive")
        if not 0 < self.shrink < 1:
            raise ParameterError("shrink factor must lie in (0, 1)")
        if self.branch not in ("lowest", "highest"):
            raise ParameterError("branch must be 'lowest' or 'highest'")

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(self.initial_field, str):
            d["initial_field"] = "field"
        return d


# -- seeds -------------------------------------------------------------------------

def seed_field(grid: RadialGrid, kind: str, p: float, config: SolveConfig) -> Field:
    x = grid.nodes / grid.radius
    if kind == "bump":
        vals = (1.0 - x) ** 2
    elif kind == "bubble":
        vals = talenti_profile(x, config.bubble_epsilon, grid.dim, p) * (1.0 - x**2)
    elif kind == "random":
        rng = np.random.default_rng(config.seed)
        k = np.arange(1, 6)
        coef = rng.normal(size=k.size) / k
        vals = (1.0 - x**2) * (1.5 + np.cos(np.outer(x, k) * math.pi) @ coef)
    else:
        raise ParameterError(f"unknown initial field {kind!r}")
    vals = np.array(vals, dtype=float)
    vals[-1] = 0.0
    return Field(grid, vals)


def _initial(grid, spec: ProblemSpec, config: SolveConfig, pair: bool):
    init = config.initial_field
    if isinstance(init, str):
        u = seed_field(grid, init, spec.p, config)
        return (u, seed_field(grid, init, spec.q, config)) if pair else u
    if pair:
        u, v = init
        return _on_grid(u, grid), _on_grid(v, grid)
    return _on_grid(init, grid)


def _on_grid(f: Field, grid: RadialGrid) -> Field:
    if f.grid.matches(grid):
        return f
    return prolong(f, grid)


# -- preconditioner ------------------------------------------------------------------

def _stiffness_bands(u: Field, p: float) -> np.ndarray:
    """Upper banded form of the p-weighted radial stiffness on the free nodes."""
    g = u.grid
    kappa = g.shell_volumes / g.widths**2
    if p != 2:
        d = np.abs(g.slopes(u.values))
        floor = 1e-3 * max(d.max(), 1e-300)
        kappa = kappa * np.maximum(d, floor) ** (p - 2)
    m = g.size - 1  # the node at r = R is held at zero
    ab = np.zeros((2, m))
    ab[1] = kappa[:m]
    ab[1, 1:] += kappa[: m - 1]
    ab[0, 1:] = -kappa[: m - 1]
    return ab


def _precondition(u: Field, p: float, grad: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (direction, K-norm of u squared)."""
    ab = _stiffness_bands(u, p)
    d = np.zeros_like(grad)
    d[:-1] = -solveh_banded(ab, grad[:-1], check_finite=False)
    x = u.values[:-1]
    kx = ab[1] * x
    kx[:-1] += ab[0, 1:] * x[1:]
    kx[1:] += ab[0, 1:] * x[:-1]
    return d, float(x @ kx)


# -- descent -----------------------------------------------------------------------

@dataclass
class _Trace:
    energies: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)


def _descend(project, grad_and_dir, start, config: SolveConfig) -> NehariPoint:
    """Generic projected Armijo descent; ``start`` is a tuple of fields."""
    w = project(start)
    trace = _Trace([w.energy], [])
    step = config.initial_step
    converged = False
    status = "max_iterations"
    it = 0
    for it in range(1, config.max_iterations + 1):
        grads, dirs, knorm = grad_and_dir(w.fields)
        slope = sum(float(g @ d) for g, d in zip(grads, dirs))
        stat = math.sqrt(max(-slope, 0.0) / knorm) if knorm > 0 else 0.0
        trace.stationarity.append(stat)
        if stat < config.stationarity_tol:
            converged, status = True, "stationary"
            break
        tau = step
        while True:
            try:
                trial = project(tuple(f + tau * d for f, d in zip(w.fields, dirs)))
                ok = trial.energy <= w.energy + config.slope_fraction * tau * slope
            except ProjectionError:
                ok = False
            if ok:
                break
            tau *= config.shrink
            if tau < 1e-14 * config.initial_step:
                trial = None
                break
        if trial is None:
            status = "line_search_stalled"
            break
        w = trial
        trace.energies.append(w.energy)
        step = min(2.0 * tau, 1e6 * config.initial_step)
        if w.energy < config.energy_floor:
            status = "diverged"
            break
    w.converged = converged and w.converged
    w.info.update({"iterations": it, "status": status, "stationarity":
                   trace.stationarity[-1] if trace.stationarity else None,
                   "energy_history_tail": trace.energies[-5:]})
    log.debug("descent finished: %s after %d iterations, energy %.12g", status, it, w.energy)
    return w


def minimize_scalar_nehari(spec: ProblemSpec, grid: RadialGrid,
                           config: SolveConfig | None = None) -> NehariPoint:
    """Projected descent for inf of J_lambda over its Nehari set on ``grid``."""
    config = config or SolveConfig()
    start = _initial(grid, spec, config, pair=False)

    def project(fields):
        return project_scalar(spec, fields[0], branch=config.branch)

    def grad_and_dir(fields):
        u = fields[0]
        g = grad_J(spec, u)
        g[-1] = 0.0
        d, kn = _precondition(u, spec.p, g)
        return (g,), (d,), kn

    return _descend(project, grad_and_dir, (start,), config)


def minimize_system_nehari(spec: ProblemSpec, grid: RadialGrid,
                           config: SolveConfig | None = None) -> NehariPoint:
    """Projected descent for inf of I_{lambda,mu} over its Nehari set on ``grid``."""
    spec.check_system()
    config = config or SolveConfig()
    start = _initial(grid, spec, config, pair=True)

    def project(fields):
        return project_system(spec, fields[0], fields[1], branch=config.branch)

    def grad_and_dir(fields):
        u, v = fields
        gu, gv = grad_I(spec, u, v)
        gu[-1] = gv[-1] = 0.0
        du, ku = _precondition(u, spec.p, gu)
        dv, kv = _precondition(v, spec.q, gv)
        return (gu, gv), (du, dv), ku + kv

    try:
        return _descend(project, grad_and_dir, start, config)
    except ProjectionError:
        # coupling degenerated at the seed: reseed with the default pair
        log.warning("seed pair has no Nehari projection; reseeding with bumps")
        reseed = SolveConfig(**{**asdict(config), "initial_field": "bump"})
        start = _initial(grid, spec, reseed, pair=True)
        return _descend(project, grad_and_dir, start, reseed)


def minimize_on_refinements(spec: ProblemSpec, grids, config: SolveConfig | None = None,
                            system: bool = False) -> list[NehariPoint]:
    """Solve on each grid in turn, warm-starting from the previous solution.

    With nested grids the prolonged start is the same function, so the
    energies are non-increasing along the list up to quadrature roundoff.
    """
    config = config or SolveConfig()
    solve = minimize_system_nehari if system else minimize_scalar_nehari
    points: list[NehariPoint] = []
    for grid in grids:
        conf = config
        if points:
            prev = points[-1].fields
            conf = SolveConfig(**{**asdict(config), "initial_field": prev if system else prev[0]})
        points.append(solve(spec, grid, conf))
    return points


# -- critical levels -------------------------------------------------------------------

@dataclass
class CriticalLevelReport:
    inf_J0: float
    inf_J_lambda: float
    c_star: float
    sobolev_constant: float
    provenance: dict
    converged: bool = True
    attained: bool = False
    mesh_inf_J0: float | None = None
    holder_bound: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _second_summand(point: NehariPoint | None, config: SolveConfig):
    if point is None:
        return 0.0, True, False, {}
    e = point.energy
    info = {"solver_energy": e, "solver_status": point.info.get("status"),
            "solver_iterations": point.info.get("iterations")}
    if point.info.get("status") == "diverged" or e < config.energy_floor:
        info["diverged"] = True
        return -math.inf, False, False, info
    return min(0.0, e), point.converged, e < 0, info


def _sobolev(dim: int, p: float):
    est = sobolev_constant(dim, float(p))
    if not est.trusted:
        log.warning("Sobolev estimate for N=%d, p=%g is not trusted (truncation %.2e)",
                    dim, p, est.truncation_indicator)
    return est


def critical_level_scalar(spec: ProblemSpec, grid: RadialGrid, config: SolveConfig | None = None,
                          mesh_check: bool = False) -> CriticalLevelReport:
    """c*(lambda) = inf over N(J_0) of J_0 + inf over N(J_lambda) U {0} of J_lambda."""
    config = config or SolveConfig()
    est = _sobolev(spec.dim, spec.p)
    inf_j0 = est.value ** (spec.dim / spec.p) / spec.dim
    prov = {"inf_J0": "bubble quadrature: (1/N) S_p^(N/p)", "sobolev_trusted": est.trusted,
            "sobolev_truncation": est.truncation_indicator}
    point = None
    if spec.lam != 0 and spec.perturbation_f.degree == spec.p:
        # p-homogeneous perturbation: on the Nehari set J = (1/N) t^(p*) C > 0
        prov["inf_J_lambda"] = "zero field: perturbation of degree p keeps J positive on its Nehari set"
    elif spec.lam != 0 and spec.perturbation_f.tag != "none":
        try:
            point = minimize_scalar_nehari(spec, grid, config)
        except ProjectionError as exc:
            prov["projection_failure"] = str(exc)
    else:
        prov["inf_J_lambda"] = "zero field: J_0 is positive on its Nehari set"
    second, conv, attained, info = _second_summand(point, config)
    prov.update(info)
    if "projection_failure" in prov:
        conv = False
    report = CriticalLevelReport(inf_j0, second, inf_j0 + second, est.value, prov, conv, attained)
    if mesh_check:
        zero = ProblemSpec(spec.dim, spec.p)
        report.mesh_inf_J0 = minimize_scalar_nehari(zero, grid, config).energy
    return report


def holder_lower_bound(spec: ProblemSpec, S_p: float, S_q: float) -> float:
    """Lower bound on inf of I_{0,0} over its Nehari set from Hoelder's inequality on R."""
    r = r_exponent(spec)
    a1, b1, p, q = spec.alpha + 1, spec.beta + 1, spec.p, spec.q
    return level_factor(spec) * (S_p * S_q ** (p * b1 / (q * a1))) ** (r / (r - p))


def equal_exponent_level(spec: ProblemSpec, S_p: float) -> float:
    """(p/(N-p)) S_p^(N/p): the equal-exponent value of inf I_{0,0}."""
    return spec.p / (spec.dim - spec.p) * S_p ** (spec.dim / spec.p)


def critical_level_system(spec: ProblemSpec, grid: RadialGrid,
                          config: SolveConfig | None = None) -> CriticalLevelReport:
    """c*(lambda, mu) for the coupled system."""
    spec.check_system()
    config = config or SolveConfig()
    sp_est = _sobolev(spec.dim, spec.p)
    sq_est = _sobolev(spec.dim, spec.q) if spec.q != spec.p else sp_est
    bound = holder_lower_bound(spec, sp_est.value, sq_est.value)
    prov = {"sobolev_trusted": sp_est.trusted and sq_est.trusted}
    conv = True
    if spec.p == spec.q:
        first = equal_exponent_level(spec, sp_est.value)
        prov["inf_I00"] = "equal exponents: (p/(N-p)) S_p^(N/p)"
    else:
        zero = ProblemSpec(spec.dim, spec.p, spec.q, spec.alpha, spec.beta)
        pt = minimize_system_nehari(zero, grid, config)
        first = pt.energy
        conv = pt.converged
        prov["inf_I00"] = "mesh minimization (upper estimate), Hoelder bound alongside"
        prov["inf_I00_above_bound"] = first >= bound
    point = None
    active_f = spec.lam != 0 and spec.perturbation_f.tag != "none"
    active_g = spec.mu != 0 and spec.perturbation_g.tag != "none"
    homogeneous = ((not active_f or spec.perturbation_f.degree == spec.p)
                   and (not active_g or spec.perturbation_g.degree == spec.q))
    if (active_f or active_g) and homogeneous:
        # on the Nehari set I = R (s^(a+1) t^(b+1)) ((a+1)/p + (b+1)/q - 1) > 0
        prov["inf_I_lambda_mu"] = "zero pair: perturbations of degree p, q keep I positive on its Nehari set"
    elif active_f or active_g:
        try:
            point = minimize_system_nehari(spec, grid, config)
        except ProjectionError as exc:
            prov["projection_failure"] = str(exc)
            conv = False
    else:
        prov["inf_I_lambda_mu"] = "zero pair attains the infimum"
    second, c2, attained, info = _second_summand(point, config)
    prov.update(info)
    return CriticalLevelReport(first, second, first + second, sp_est.value, prov,
                               conv and c2, attained, holder_bound=bound)
