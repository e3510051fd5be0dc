"""Talenti extremals, the best Sobolev constant and the cut-off bubble sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError, ResolutionError
from .functionals import ProblemSpec, gradient_energy, power_integral
from .grid import Field, RadialGrid, build_radial_grid, sphere_area

TRUST_THRESHOLD = 1e-3
SHELL_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class BubbleSpec:
    epsilon: float
    cutoff_radius: float
    grid: RadialGrid

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ParameterError(f"epsilon must be positive, got {self.epsilon!r}")
        if not (0 < self.cutoff_radius < self.grid.radius):
            raise ParameterError(
                f"cutoff radius must lie in (0, {self.grid.radius}), got {self.cutoff_radius!r}")


@dataclass(frozen=True)
class SobolevEstimate:
    value: float
    grad_norm_p: float
    crit_norm: float
    truncation_indicator: float
    epsilon: float
    threshold: float = TRUST_THRESHOLD

    @property
    def trusted(self) -> bool:
        return self.truncation_indicator < self.threshold

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "value": self.value, "grad_norm_p": self.grad_norm_p,
                "crit_norm": self.crit_norm, "truncation_indicator": self.truncation_indicator,
                "trusted": self.trusted}


def talenti_constant(dim: int, p: float) -> float:
    """Normalization C_N making Phi_eps solve -Delta_p Phi = Phi^(p*-1)."""
    return (dim * ((dim - p) / (p - 1)) ** (p - 1)) ** ((dim - p) / p**2)


def core_radius(epsilon: float, p: float) -> float:
    """Radius where r^(p/(p-1)) equals epsilon."""
    return epsilon ** ((p - 1) / p)


def talenti_profile(r, epsilon: float, dim: int, p: float):
    r = np.asarray(r, dtype=float)
    c = talenti_constant(dim, p)
    return c * epsilon ** ((dim - p) / p**2) * (epsilon + r ** (p / (p - 1))) ** ((p - dim) / p)


def talenti_slope(r, epsilon: float, dim: int, p: float):
    """d Phi_eps / dr in closed form."""
    r = np.asarray(r, dtype=float)
    c = talenti_constant(dim, p)
    e = p / (p - 1)
    return (c * epsilon ** ((dim - p) / p**2) * ((p - dim) / p)
            * (epsilon + r**e) ** ((p - dim) / p - 1) * e * r ** (e - 1))


def talenti_field(spec: BubbleSpec, problem: ProblemSpec) -> Field:
    g = spec.grid
    return Field(g, talenti_profile(g.nodes, spec.epsilon, g.dim, problem.p))


def _outer_fraction(grid: RadialGrid, cell_contrib: np.ndarray) -> float:
    total = cell_contrib.sum()
    if total == 0:
        return 0.0
    outer = grid.nodes[:-1] >= (1 - SHELL_FRACTION) * grid.radius
    return float(cell_contrib[outer].sum() / total)


def estimate_sobolev_constant(spec: BubbleSpec, problem: ProblemSpec,
                              threshold: float = TRUST_THRESHOLD) -> SobolevEstimate:
    """Critical Sobolev quotient of Phi_eps by quadrature on the ball of ``spec.grid``."""
    g = spec.grid
    if g.dim != problem.dim:
        raise ParameterError("bubble grid and problem disagree on the dimension")
    p, ps = problem.p, problem.p_star
    phi = talenti_field(spec, problem)
    grad_cells = g.shell_volumes * np.abs(g.slopes(phi.values)) ** p
    crit_cells = (g.gauss_weights * np.abs(g.at_gauss(phi.values)) ** ps).sum(axis=1)
    G, C = float(grad_cells.sum()), float(crit_cells.sum())
    indicator = max(_outer_fraction(g, grad_cells), _outer_fraction(g, crit_cells))
    return SobolevEstimate(G / C ** (p / ps), G, C, indicator, spec.epsilon, threshold)


def sobolev_grid(dim: int, radius: float = 4096.0, node_count: int = 4000,
                 grading: float = 8.0) -> RadialGrid:
    return build_radial_grid(dim, radius, node_count, grading)


@lru_cache(maxsize=64)
def sobolev_constant(dim: int, p: float) -> SobolevEstimate:
    """Default bubble-quadrature route to S_p (eps = 1 on a large graded ball)."""
    g = sobolev_grid(dim)
    return estimate_sobolev_constant(BubbleSpec(1.0, 0.5 * g.radius, g), ProblemSpec(dim, p))


def smooth_cutoff(r, rho: float):
    """1 on [0, rho/2], 0 beyond rho, quintic smoothstep in between."""
    x = np.clip((np.asarray(r, dtype=float) - 0.5 * rho) / (0.5 * rho), 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def required_spacing(epsilon: float, p: float) -> float:
    return core_radius(epsilon, p) / 4.0


def check_resolution(grid: RadialGrid, epsilon: float, p: float) -> None:
    rc = core_radius(epsilon, p)
    need = required_spacing(epsilon, p)
    i = min(int(np.searchsorted(grid.nodes, rc)), grid.size - 1)
    h = grid.widths[max(i - 1, 0)]
    if h > need:
        raise ResolutionError(
            f"bubble core radius {rc:.3e} needs node spacing <= {need:.3e} there, grid has {h:.3e}")


def psi_sequence(spec: BubbleSpec, problem: ProblemSpec, n: int) -> Field:
    """Cut-off bubble phi * Phi_{1/n} on ``spec.grid``."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    g = spec.grid
    eps = 1.0 / int(n)
    check_resolution(g, eps, problem.p)
    vals = smooth_cutoff(g.nodes, spec.cutoff_radius) * talenti_profile(g.nodes, eps, g.dim, problem.p)
    return Field(g, vals)


def concentration_profile(f: Field, radii, s: float) -> list[tuple[float, float]]:
    """Fraction of the mass of |f|^s inside each ball B_rho."""
    g = f.grid
    dens = np.abs(g.at_gauss(f.values)) ** s
    cells = (g.gauss_weights * dens).sum(axis=1)
    total = float(cells.sum())
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    out = []
    for rho in radii:
        rho = float(rho)
        if not 0 <= rho <= g.radius:
            raise ParameterError(f"radius {rho} outside the grid")
        if total == 0:
            out.append((rho, 0.0))
            continue
        i = min(int(np.searchsorted(g.nodes, rho, side="right")) - 1, g.size - 2)
        a, b = g.nodes[i], g.nodes[i + 1]
        mass = cum[i] + _partial_cell(f, i, a, min(rho, b), s)
        out.append((rho, min(mass / total, 1.0)))
    return out


def _partial_cell(f: Field, i: int, a: float, b: float, s: float) -> float:
    if b <= a:
        return 0.0
    g = f.grid
    x, w = np.polynomial.legendre.leggauss(8)
    pts = a + 0.5 * (b - a) * (x + 1)
    ua, ub = f.values[i], f.values[i + 1]
    theta = (pts - g.nodes[i]) / g.widths[i]
    vals = np.abs(ua * (1 - theta) + ub * theta) ** s
    return float(sphere_area(g.dim) * 0.5 * (b - a) * np.sum(w * vals * pts ** (g.dim - 1)))


# -- the common limit of the two norms along psi_n --------------------------------

@dataclass(frozen=True)
class LimitReport:
    n_values: tuple[int, ...]
    crit_norms: tuple[float, ...]
    grad_norms: tuple[float, ...]
    crit_limit: float
    grad_limit: float
    sobolev: float
    candidates: dict
    match: str | None

    @property
    def common_limit(self) -> float:
        return 0.5 * (self.crit_limit + self.grad_limit)

    def to_dict(self) -> dict:
        return {"n": list(self.n_values), "crit_norms": list(self.crit_norms),
                "grad_norms": list(self.grad_norms), "crit_limit": self.crit_limit,
                "grad_limit": self.grad_limit, "common_limit": self.common_limit,
                "sobolev_constant": self.sobolev, "candidates": self.candidates,
                "match": self.match}


def aitken_limit(seq) -> float:
    """Delta-squared extrapolation of the last three terms; the last term if not geometric."""
    x0, x1, x2 = (float(v) for v in seq[-3:])
    d1, d2 = x1 - x0, x2 - x1
    if d1 == 0 or d2 == 0:
        return x2
    ratio = d2 / d1
    if not 0 < ratio < 1:
        return x2
    return x2 + d2 * ratio / (1 - ratio)


def psi_norms(spec: BubbleSpec, problem: ProblemSpec, n_values) -> list[tuple[int, float, float]]:
    rows = []
    for n in n_values:
        psi = psi_sequence(spec, problem, n)
        rows.append((int(n), power_integral(psi, problem.p_star), gradient_energy(psi, problem.p)))
    return rows


def adjudicate_limit(spec: BubbleSpec, problem: ProblemSpec, n_values=(2, 4, 8, 16, 32),
                     sobolev: float | None = None, tol: float = 0.01) -> LimitReport:
    """Extrapolate both norms of psi_n and compare with S_p and S_p^(N/p)."""
    rows = psi_norms(spec, problem, n_values)
    crit = [r[1] for r in rows]
    grad = [r[2] for r in rows]
    lc, lg = aitken_limit(crit), aitken_limit(grad)
    if sobolev is None:
        sobolev = sobolev_constant(problem.dim, problem.p).value
    common = 0.5 * (lc + lg)
    cands = {"S_p": sobolev, "S_p^(N/p)": sobolev ** (problem.dim / problem.p)}
    rel = {k: abs(common - v) / v for k, v in cands.items()}
    hits = [k for k, e in rel.items() if e < tol and abs(lc - lg) / common < tol]
    match = hits[0] if len(hits) == 1 else None
    return LimitReport(tuple(r[0] for r in rows), tuple(crit), tuple(grad), lc, lg, sobolev,
                       {k: {"value": cands[k], "relative_gap": rel[k]} for k in cands}, match)
