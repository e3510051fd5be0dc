"""Energies and Gateaux derivatives for the scalar and the coupled problem.

Gradient terms are exact for piecewise-linear fields (cell slope times shell
volume).  Zeroth-order terms go through the Gauss rule of the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, ParameterError
from .grid import Field, check_same_grid, integrate_nonlinear

# regularization of |u'|^(p-2) inside derivative assembly only
GRADIENT_DELTA = 1e-10
COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class PerturbationKind:
    """Autonomous subcritical term f(u) with primitive F(u).

    ``linear``: f = u, F = u^2/2.  ``power``: f = |u|^(k-2) u, F = |u|^k / k.
    Both are homogeneous, of degree 2 and k respectively.
    """

    tag: str = "none"
    exponent: float | None = None

    def __post_init__(self):
        if self.tag not in ("none", "linear", "power"):
            raise ParameterError(f"unknown perturbation kind {self.tag!r}")
        if self.tag == "power":
            if self.exponent is None or not math.isfinite(self.exponent) or self.exponent <= 1:
                raise ParameterError("power perturbation needs a finite exponent > 1")
        elif self.exponent is not None and self.tag != "none":
            object.__setattr__(self, "exponent", None)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def power(cls, exponent: float):
        return cls("power", float(exponent))

    @property
    def degree(self) -> float | None:
        return {"none": None, "linear": 2.0, "power": self.exponent}[self.tag]

    def F(self, u: np.ndarray) -> np.ndarray:
        if self.tag == "none":
            return np.zeros_like(u)
        if self.tag == "linear":
            return 0.5 * u * u
        return np.abs(u) ** self.exponent / self.exponent

    def f(self, u: np.ndarray) -> np.ndarray:
        if self.tag == "none":
            return np.zeros_like(u)
        if self.tag == "linear":
            return u
        return np.sign(u) * np.abs(u) ** (self.exponent - 1.0)

    def to_dict(self) -> dict:
        d = {"tag": self.tag}
        if self.tag == "power":
            d["exponent"] = self.exponent
        return d

    @classmethod
    def from_dict(cls, d) -> "PerturbationKind":
        if d is None:
            return cls()
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("tag", "none"), d.get("exponent"))


@dataclass(frozen=True)
class ProblemSpec:
    """Exponents and parameters of the scalar problem or the coupled system.

    ``q`` defaults to ``p``.  Construction checks 1 < p, q < N and the
    subcritical growth of both perturbations; :meth:`check_system` adds the
    coupling conditions needed by the system routines.
    """

    dim: int
    p: float
    q: float | None = None
    alpha: float = 0.0
    beta: float = 0.0
    lam: float = 0.0
    mu: float = 0.0
    perturbation_f: PerturbationKind = field(default_factory=PerturbationKind)
    perturbation_g: PerturbationKind = field(default_factory=PerturbationKind)

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", self.p)
        for name in ("p", "q", "alpha", "beta", "lam", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if isinstance(self.dim, bool) or int(self.dim) != self.dim or self.dim < 3:
            raise ParameterError(f"dim must be an integer >= 3, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))
        for name in ("p", "q"):
            e = getattr(self, name)
            if not (1 < e < self.dim):
                raise AdmissibilityError(
                    f"exponent condition 1 < {name} < N violated: {name}={e}, N={self.dim}")
        if self.alpha < 0 or self.beta < 0:
            raise AdmissibilityError("alpha and beta must be nonnegative")
        for kind, crit, name in ((self.perturbation_f, self.p_star, "f"),
                                 (self.perturbation_g, self.q_star, "g")):
            if kind.tag == "power" and not kind.exponent < crit:
                raise AdmissibilityError(
                    f"growth condition violated: power exponent of {name} "
                    f"({kind.exponent}) must stay below the critical exponent {crit}")

    @property
    def p_star(self) -> float:
        return self.dim * self.p / (self.dim - self.p)

    @property
    def q_star(self) -> float:
        return self.dim * self.q / (self.dim - self.q)

    def coupling_defect(self) -> float:
        return (self.alpha + 1) / self.p_star + (self.beta + 1) / self.q_star - 1.0

    def check_system(self) -> "ProblemSpec":
        if abs(self.coupling_defect()) > COUPLING_TOL:
            raise AdmissibilityError(
                "critical coupling condition (alpha+1)/p* + (beta+1)/q* = 1 violated "
                f"(defect {self.coupling_defect():.3e})")
        if not self.beta + 1 < self.q:
            raise AdmissibilityError(
                f"beta + 1 < q required for a finite fiber exponent r > p "
                f"(beta={self.beta}, q={self.q})")
        return self

    def to_dict(self) -> dict:
        return {"dim": self.dim, "p": self.p, "q": self.q, "alpha": self.alpha,
                "beta": self.beta, "lambda": self.lam, "mu": self.mu,
                "perturbation_f": self.perturbation_f.to_dict(),
                "perturbation_g": self.perturbation_g.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(dim=d["dim"], p=d["p"], q=d.get("q"), alpha=d.get("alpha", 0.0),
                   beta=d.get("beta", 0.0), lam=d.get("lambda", d.get("lam", 0.0)),
                   mu=d.get("mu", 0.0),
                   perturbation_f=PerturbationKind.from_dict(d.get("perturbation_f")),
                   perturbation_g=PerturbationKind.from_dict(d.get("perturbation_g")))


# -- building blocks ---------------------------------------------------------

def _signed_pow(x: np.ndarray, a: float) -> np.ndarray:
    """|x|^(a-1) x without evaluating 0 to a negative power."""
    return np.sign(x) * np.abs(x) ** a


def gradient_energy(u: Field, p: float) -> float:
    """Integral of |u'|^p, exact for the piecewise-linear field."""
    g = u.grid
    return float(g.shell_volumes @ np.abs(g.slopes(u.values)) ** p)


def _flux(u: Field, p: float) -> np.ndarray:
    """Regularized |u'|^(p-2) u' per cell."""
    d = u.grid.slopes(u.values)
    if p == 2:
        return d
    return (d * d + GRADIENT_DELTA**2) ** ((p - 2) / 2) * d


def _flux_gradient(u: Field, p: float) -> np.ndarray:
    """Nodal gradient of (1/p) * integral |u'|^p."""
    g = u.grid
    c = g.shell_volumes * _flux(u, p) / g.widths
    out = np.zeros(g.size)
    out[:-1] -= c
    out[1:] += c
    return out


def power_integral(u: Field, s: float) -> float:
    g = u.grid
    return integrate_nonlinear(g, np.abs(g.at_gauss(u.values)) ** s)


def perturbation_integral(kind: PerturbationKind, u: Field) -> float:
    if kind.tag == "none":
        return 0.0
    g = u.grid
    return integrate_nonlinear(g, kind.F(g.at_gauss(u.values)))


def eval_P(spec: ProblemSpec, u: Field) -> float:
    return gradient_energy(u, spec.p)


def eval_Q(spec: ProblemSpec, v: Field) -> float:
    return gradient_energy(v, spec.q)


def eval_R(spec: ProblemSpec, u: Field, v: Field) -> float:
    g = check_same_grid(u, v)
    ug, vg = g.at_gauss(u.values), g.at_gauss(v.values)
    return integrate_nonlinear(g, np.abs(ug) ** (spec.alpha + 1) * np.abs(vg) ** (spec.beta + 1))


def eval_J(spec: ProblemSpec, u: Field) -> float:
    e = eval_P(spec, u) / spec.p - power_integral(u, spec.p_star) / spec.p_star
    if spec.lam != 0:
        e -= spec.lam * perturbation_integral(spec.perturbation_f, u)
    return e


def eval_I(spec: ProblemSpec, u: Field, v: Field) -> float:
    check_same_grid(u, v)
    a1, b1 = spec.alpha + 1, spec.beta + 1
    part_u = eval_P(spec, u) / spec.p
    if spec.lam != 0:
        part_u -= spec.lam * perturbation_integral(spec.perturbation_f, u)
    part_v = eval_Q(spec, v) / spec.q
    if spec.mu != 0:
        part_v -= spec.mu * perturbation_integral(spec.perturbation_g, v)
    return a1 * part_u + b1 * part_v - eval_R(spec, u, v)


# -- derivatives ---------------------------------------------------------------

def gateaux_residual(spec: ProblemSpec, u: Field, direction: Field) -> float:
    """J_lambda'(u) applied to ``direction``."""
    g = check_same_grid(u, direction)
    lin = float(g.shell_volumes @ (_flux(u, spec.p) * g.slopes(direction.values)))
    ug, dg = g.at_gauss(u.values), g.at_gauss(direction.values)
    nonlin = _signed_pow(ug, spec.p_star - 1)
    if spec.lam != 0:
        nonlin = nonlin + spec.lam * spec.perturbation_f.f(ug)
    return lin - integrate_nonlinear(g, nonlin * dg)


def grad_J(spec: ProblemSpec, u: Field) -> np.ndarray:
    """Nodal gradient of the discrete J_lambda (the dual vector of J_lambda'(u))."""
    g = u.grid
    ug = g.at_gauss(u.values)
    nonlin = _signed_pow(ug, spec.p_star - 1)
    if spec.lam != 0:
        nonlin = nonlin + spec.lam * spec.perturbation_f.f(ug)
    return _flux_gradient(u, spec.p) - g.from_gauss(g.gauss_weights * nonlin)


def _coupling_factors(spec: ProblemSpec, ug: np.ndarray, vg: np.ndarray):
    # shared factor first, so that u = v gives bitwise equal results when alpha = beta
    au, av = np.abs(ug), np.abs(vg)
    m = au**spec.alpha * av**spec.beta
    du = (spec.alpha + 1) * m * np.sign(ug) * av
    dv = (spec.beta + 1) * m * au * np.sign(vg)
    return du, dv


def D1(spec: ProblemSpec, u: Field, v: Field, direction: Field) -> float:
    """Partial derivative of I_{lambda,mu} in its first argument, applied to ``direction``."""
    g = check_same_grid(u, v, direction)
    ug, vg, dg = g.at_gauss(u.values), g.at_gauss(v.values), g.at_gauss(direction.values)
    lin = float(g.shell_volumes @ (_flux(u, spec.p) * g.slopes(direction.values)))
    pert = 0.0
    if spec.lam != 0:
        pert = spec.lam * integrate_nonlinear(g, spec.perturbation_f.f(ug) * dg)
    cu, _ = _coupling_factors(spec, ug, vg)
    return (spec.alpha + 1) * (lin - pert) - integrate_nonlinear(g, cu * dg)


def D2(spec: ProblemSpec, u: Field, v: Field, direction: Field) -> float:
    g = check_same_grid(u, v, direction)
    ug, vg, dg = g.at_gauss(u.values), g.at_gauss(v.values), g.at_gauss(direction.values)
    lin = float(g.shell_volumes @ (_flux(v, spec.q) * g.slopes(direction.values)))
    pert = 0.0
    if spec.mu != 0:
        pert = spec.mu * integrate_nonlinear(g, spec.perturbation_g.f(vg) * dg)
    _, cv = _coupling_factors(spec, ug, vg)
    return (spec.beta + 1) * (lin - pert) - integrate_nonlinear(g, cv * dg)


def grad_I(spec: ProblemSpec, u: Field, v: Field) -> tuple[np.ndarray, np.ndarray]:
    g = check_same_grid(u, v)
    ug, vg = g.at_gauss(u.values), g.at_gauss(v.values)
    cu, cv = _coupling_factors(spec, ug, vg)
    gu = _flux_gradient(u, spec.p)
    gv = _flux_gradient(v, spec.q)
    if spec.lam != 0:
        gu = gu - spec.lam * g.from_gauss(g.gauss_weights * spec.perturbation_f.f(ug))
    if spec.mu != 0:
        gv = gv - spec.mu * g.from_gauss(g.gauss_weights * spec.perturbation_g.f(vg))
    gu = (spec.alpha + 1) * gu - g.from_gauss(g.gauss_weights * cu)
    gv = (spec.beta + 1) * gv - g.from_gauss(g.gauss_weights * cv)
    return gu, gv


def sample_admissible_system(rng: np.random.Generator, max_dim: int = 8) -> ProblemSpec:
    """Random (N, p, q, alpha, beta) meeting the coupling condition and beta + 1 < q.

    alpha is solved from the coupling condition; draws with alpha < 0 are rejected.
    """
    while True:
        dim = int(rng.integers(3, max_dim + 1))
        p = float(rng.uniform(1.05, dim - 0.05))
        q = float(rng.uniform(1.05, dim - 0.05))
        beta = float(rng.uniform(0.0, q - 1.0)) * 0.999
        q_star = dim * q / (dim - q)
        p_star = dim * p / (dim - p)
        alpha = p_star * (1.0 - (beta + 1.0) / q_star) - 1.0
        if alpha >= 0:
            spec = ProblemSpec(dim, p, q, alpha, beta)
            if abs(spec.coupling_defect()) <= COUPLING_TOL:
                return spec
