"""Empirical Palais-Smale diagnostics.

A candidate PS sequence is summarized by its energies, the size of its
discrete Euler-Lagrange residual, Brezis-Lieb remainders against a
candidate weak limit, and how much of the remainder mass sits in a small
ball around the origin.  ``build_noncompact_ps`` produces the standard
loss-of-compactness example: a Nehari minimizer plus a concentrating
cut-off bubble.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bubbles import BubbleSpec, concentration_profile, psi_sequence
from .errors import GridMismatchError, ParameterError
from .functionals import (
    ProblemSpec,
    eval_I,
    eval_J,
    eval_P,
    eval_Q,
    eval_R,
    gradient_energy,
    grad_I,
    grad_J,
    power_integral,
)
from .grid import Field, check_same_grid, lp_norm, prolong
from .nehari import NehariPoint, s0_t0

BALL_FRACTION = 0.1
MASS_THRESHOLD = 0.9
LEVEL_TOL = 0.02
CAUCHY_RATIO = 0.5

VERDICTS = ("apparently-compact", "concentrating", "inconclusive")


def brezis_lieb_defect(u_n: Field, u: Field, s: float) -> float:
    """| ||u_n||_s^s - ||u_n - u||_s^s - ||u||_s^s |."""
    if not s > 1:
        raise ParameterError(f"exponent must exceed 1, got {s!r}")
    check_same_grid(u_n, u)
    return abs(power_integral(u_n, s) - power_integral(u_n - u, s) - power_integral(u, s))


def gradient_split_defect(u_n: Field, u: Field, p: float) -> float:
    """The same remainder for the gradient energy: | P(u_n) - P(u_n - u) - P(u) |."""
    check_same_grid(u_n, u)
    return abs(gradient_energy(u_n, p) - gradient_energy(u_n - u, p) - gradient_energy(u, p))


@dataclass
class PSReport:
    levels: list
    residual_grad: list
    residual_crit: list
    bl_defects: list
    concentration: list
    distances: list
    verdict: str
    c_star_used: float
    ball_radius: float
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ParameterError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self):
        labels = self.labels or list(range(len(self.levels)))
        return zip(labels, self.levels, self.residual_grad, self.residual_crit,
                   self.bl_defects, self.concentration)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "level", "residual_grad", "residual_crit", "bl_defect", "mass_fraction"])
            for n, *vals in self.rows():
                w.writerow([n] + [f"{v:.17g}" for v in vals])


# -- building the sequence -------------------------------------------------------

def _as_fields(item) -> tuple[Field, ...]:
    return tuple(item) if isinstance(item, (tuple, list)) else (item,)


def _on(f: Field, grid) -> Field:
    return f if f.grid.matches(grid) else prolong(f, grid)


def build_noncompact_ps(spec: ProblemSpec, base: NehariPoint | None, bubble: BubbleSpec,
                        n_list) -> list:
    """Base point plus the cut-off bubble psi_n, one entry per n.

    A base with positive energy is replaced by zero, since zero attains the
    infimum over the Nehari set together with the origin.  For systems both
    components receive the bubble, scaled onto the unperturbed Nehari set.
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ParameterError("n_list must be nonempty")
    g = bubble.grid
    system = base is not None and base.v is not None
    if base is None or base.energy > 0:
        zero = Field.zeros(g)
        base_fields = (zero, zero) if system else (zero,)
    else:
        base_fields = tuple(_on(f, g) for f in base.fields)
    out = []
    for n in n_list:
        psi = psi_sequence(bubble, spec, n)
        if not system:
            out.append(base_fields[0] + psi)
            continue
        psi_q = psi if spec.q == spec.p else psi_sequence(bubble, ProblemSpec(spec.dim, spec.q), n)
        s, t = s0_t0(spec, eval_P(spec, psi), eval_Q(spec, psi_q), eval_R(spec, psi, psi_q))
        out.append((base_fields[0] + s * psi, base_fields[1] + t * psi_q))
    return out


# -- the check ---------------------------------------------------------------------

def residual_field_norm(grad: np.ndarray, grid, p: float) -> float:
    """Grid L^{p'} norm of the residual density behind a nodal gradient.

    The nodal gradient is the residual tested against hat functions; dividing
    by the hat weights gives its density.  The boundary node is held fixed
    and excluded.
    """
    dens = np.zeros(grid.size)
    dens[1:-1] = grad[1:-1] / grid.weights[1:-1]
    w0 = grid.weights[0]
    if w0 > 0:
        dens[0] = grad[0] / w0
    return lp_norm(grid, Field(grid, dens), p / (p - 1))


def _ratio(num: float, den: float) -> float:
    if num == 0:
        return 0.0
    return num / den if den > 0 else math.inf


def _metrics(spec: ProblemSpec, fields: tuple[Field, ...]):
    """(level, residual by gradient norm, residual by critical norm)."""
    if len(fields) == 1:
        u = fields[0]
        r = residual_field_norm(grad_J(spec, u), u.grid, spec.p)
        return (eval_J(spec, u), _ratio(r, gradient_energy(u, spec.p) ** (1 / spec.p)),
                _ratio(r, lp_norm(u.grid, u, spec.p_star)))
    u, v = fields
    gu, gv = grad_I(spec, u, v)
    ru = residual_field_norm(gu, u.grid, spec.p)
    rv = residual_field_norm(gv, v.grid, spec.q)
    by_grad = (_ratio(ru, gradient_energy(u, spec.p) ** (1 / spec.p))
               + _ratio(rv, gradient_energy(v, spec.q) ** (1 / spec.q)))
    by_crit = (_ratio(ru, lp_norm(u.grid, u, spec.p_star))
               + _ratio(rv, lp_norm(v.grid, v, spec.q_star)))
    return eval_I(spec, u, v), by_grad, by_crit


def _exponents(spec: ProblemSpec, k: int):
    return (spec.p_star,) if k == 1 else (spec.p_star, spec.q_star)


def _verdict(levels, concentration, distances, scale, c_star) -> str:
    compact = _cauchy_like(distances, scale)
    last_mass = concentration[-1]
    rising = all(b >= a - 1e-12 for a, b in zip(concentration, concentration[1:]))
    near = abs(levels[-1] - c_star) <= LEVEL_TOL * max(abs(c_star), 1e-300)
    if not compact and rising and last_mass > MASS_THRESHOLD and near:
        return "concentrating"
    if compact:
        return "apparently-compact"
    return "inconclusive"


def _cauchy_like(distances, scale) -> bool:
    if not distances:
        return True
    tiny = 1e-10 * max(scale, 1e-300)
    if distances[-1] <= tiny:
        return True
    if len(distances) < 2:
        return False
    shrinking = all(b <= a * (1 + 1e-12) for a, b in zip(distances, distances[1:]))
    return shrinking and distances[-1] <= CAUCHY_RATIO * distances[0]


def ps_check(spec: ProblemSpec, sequence, c_star: float, weak_limit=None,
             labels=None) -> PSReport:
    """Assemble the PS diagnostics of ``sequence`` against the level ``c_star``.

    ``weak_limit`` defaults to the last iterate.  Remainder masses are the
    fractions of the critical norm of (u_n - weak_limit) inside B_{0.1 R}.
    """
    items = [_as_fields(s) for s in sequence]
    if not items:
        raise ParameterError("sequence must be nonempty")
    k = len(items[0])
    if any(len(it) != k for it in items):
        raise ParameterError("mixed scalar and pair entries in the sequence")
    grid = items[0][0].grid
    for it in items:
        for f in it:
            if not grid.matches(f.grid):
                raise GridMismatchError("sequence lives on more than one grid")
    limit = items[-1] if weak_limit is None else _as_fields(weak_limit)
    if len(limit) != k:
        raise ParameterError("weak limit does not match the sequence shape")
    expo = _exponents(spec, k)
    rho = BALL_FRACTION * grid.radius

    levels, rgrad, rcrit, bl, conc = [], [], [], [], []
    for it in items:
        lev, a, b = _metrics(spec, it)
        levels.append(lev)
        rgrad.append(a)
        rcrit.append(b)
        bl.append(sum(brezis_lieb_defect(f, w, s) for f, w, s in zip(it, limit, expo)))
        rem = [f - w for f, w in zip(it, limit)]
        masses = [power_integral(r, s) for r, s in zip(rem, expo)]
        total = sum(masses)
        inside = sum(m * concentration_profile(r, [rho], s)[0][1]
                     for r, m, s in zip(rem, masses, expo))
        conc.append(inside / total if total > 0 else 0.0)

    dist = []
    for a, b in zip(items, items[1:]):
        dist.append(sum(lp_norm(grid, x - y, s) for x, y, s in zip(b, a, expo)))
    scale = max(sum(lp_norm(grid, f, s) for f, s in zip(it, expo)) for it in items)
    verdict = _verdict(levels, conc, dist, scale, c_star)
    return PSReport(levels, rgrad, rcrit, bl, conc, dist, verdict, float(c_star), rho,
                    list(labels) if labels is not None else list(range(len(items))))
