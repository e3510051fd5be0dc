"""Fibering maps and projections onto the Nehari sets.

Every energy term is homogeneous along a ray, so a fiber t -> J(t u) is a
closed-form function of four moments of u.  The projections below work on
those moments; ``fiber_map`` evaluates the energy directly and serves as
the reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, root

from .errors import AdmissibilityError, ProjectionError
from .functionals import (
    ProblemSpec,
    eval_I,
    eval_J,
    eval_P,
    eval_Q,
    eval_R,
    perturbation_integral,
    power_integral,
)
from .grid import Field, check_same_grid

SCALAR_TOL = 1e-8
SYSTEM_TOL = 1e-6


@dataclass
class NehariPoint:
    fields: tuple[Field, ...]
    scalings: tuple[float, ...]
    energy: float
    residuals: tuple[float, ...]
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def u(self) -> Field:
        return self.fields[0]

    @property
    def v(self) -> Field | None:
        return self.fields[1] if len(self.fields) > 1 else None

    def to_dict(self) -> dict:
        return {"scalings": list(self.scalings), "energy": self.energy,
                "residuals": list(self.residuals), "converged": self.converged,
                "info": self.info}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- scalar fibers -----------------------------------------------------------

@dataclass(frozen=True)
class ScalarFiber:
    """t -> t^p P/p - t^p* C/p* - lam t^k A for a fixed ray."""

    p: float
    p_star: float
    P: float
    C: float
    k: float  # degree of the perturbation primitive
    A: float  # lam * integral F(u)

    def energy(self, t):
        t = np.asarray(t, dtype=float)
        return t**self.p * self.P / self.p - t**self.p_star * self.C / self.p_star - self.A * t**self.k

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return t ** (self.p - 1) * self.P - t ** (self.p_star - 1) * self.C - self.k * self.A * t ** (self.k - 1)

    def reduced(self, t):
        """derivative / t^(p-1); same sign, better scaled for root finding."""
        t = np.asarray(t, dtype=float)
        return self.P - self.C * t ** (self.p_star - self.p) - self.k * self.A * t ** (self.k - self.p)


def scalar_fiber(spec: ProblemSpec, u: Field) -> ScalarFiber:
    k = spec.perturbation_f.degree
    A = 0.0
    if spec.lam != 0 and k is not None:
        A = spec.lam * perturbation_integral(spec.perturbation_f, u)
    return ScalarFiber(spec.p, spec.p_star, eval_P(spec, u), power_integral(u, spec.p_star),
                       k if k is not None else 2.0, A)


def fiber_map(spec: ProblemSpec, u: Field, t_values) -> list[tuple[float, float]]:
    t_values = list(t_values)
    if not t_values:
        raise ValueError("t_values must be nonempty")
    return [(float(t), eval_J(spec, t * u)) for t in t_values]


def t0_scalar(spec: ProblemSpec, u: Field) -> float:
    """Scaling onto the Nehari set of the unperturbed functional."""
    if u.is_zero():
        raise ProjectionError("the zero field has no Nehari projection")
    P = eval_P(spec, u)
    C = power_integral(u, spec.p_star)
    if P == 0 or C == 0:
        raise ProjectionError("degenerate ray: zero gradient or zero critical norm")
    return (P / C) ** (1.0 / (spec.p_star - spec.p))


def fiber_critical_points(fib: ScalarFiber) -> list[float]:
    """All positive zeros of the fiber derivative, increasing."""
    t_bal = (fib.P / fib.C) ** (1.0 / (fib.p_star - fib.p))
    if fib.A == 0:
        return [t_bal]
    scales = [t_bal]
    kA = abs(fib.k * fib.A)
    if fib.k != fib.p:
        scales.append((kA / fib.P) ** (1.0 / (fib.p - fib.k)))
    if fib.k != fib.p_star:
        scales.append((kA / fib.C) ** (1.0 / (fib.p_star - fib.k)))
    lo, hi = math.log(min(scales)) - 12.0, math.log(max(scales)) + 12.0
    x = np.linspace(lo, hi, 4001)
    h = fib.reduced(np.exp(x))
    roots = []
    for i in np.nonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0)[0]:
        xr = brentq(lambda s: float(fib.reduced(math.exp(s))), x[i], x[i + 1], xtol=1e-14, rtol=1e-15)
        roots.append(math.exp(xr))
    roots += [math.exp(x[i]) for i in np.nonzero(h == 0)[0]]
    return sorted(roots)


def project_scalar(spec: ProblemSpec, u: Field, branch: str = "lowest") -> NehariPoint:
    """Scale ``u`` onto the Nehari set of J_lambda.

    With several positive critical points on the fiber, ``branch`` picks
    the one of lowest ("lowest") or highest ("highest") fiber energy.
    """
    if u.is_zero():
        raise ProjectionError("the zero field has no Nehari projection")
    fib = scalar_fiber(spec, u)
    if fib.P == 0 or fib.C == 0:
        raise ProjectionError("degenerate ray: zero gradient or zero critical norm")
    ts = fiber_critical_points(fib)
    if not ts:
        raise ProjectionError("the fiber has no positive critical point on this ray")
    energies = [float(fib.energy(t)) for t in ts]
    i = int(np.argmin(energies) if branch == "lowest" else np.argmax(energies))
    t = ts[i]
    w = t * u
    scale = max(t**fib.p * fib.P, t**fib.p_star * fib.C, abs(fib.k * fib.A) * t**fib.k)
    res = float(fib.derivative(t)) * t / scale
    return NehariPoint((w,), (t,), eval_J(spec, w), (res,),
                       converged=abs(res) < SCALAR_TOL,
                       info={"fiber_critical_points": len(ts)})


# -- system fibers -------------------------------------------------------------

def r_exponent(spec: ProblemSpec) -> float:
    """Fiber exponent r = (alpha+1) q / (q - (beta+1))."""
    spec.check_system()
    r = (spec.alpha + 1) * spec.q / (spec.q - (spec.beta + 1))
    if not r > spec.p:
        raise AdmissibilityError(f"fiber exponent r={r} must exceed p={spec.p}")
    return r


@dataclass(frozen=True)
class SystemFiber:
    spec: ProblemSpec
    P: float
    Q: float
    R: float
    A: float  # lam * integral F(u)
    B: float  # mu * integral G(v)

    @property
    def ku(self):
        return self.spec.perturbation_f.degree or 2.0

    @property
    def kv(self):
        return self.spec.perturbation_g.degree or 2.0

    def energy(self, s, t):
        sp = self.spec
        return ((sp.alpha + 1) * (s**sp.p * self.P / sp.p - self.A * s**self.ku)
                + (sp.beta + 1) * (t**sp.q * self.Q / sp.q - self.B * t**self.kv)
                - s ** (sp.alpha + 1) * t ** (sp.beta + 1) * self.R)

    def partials(self, s, t):
        """(s d/ds, t d/dt) of the fiber energy, each divided by its factor (alpha+1), (beta+1)."""
        sp = self.spec
        coup = s ** (sp.alpha + 1) * t ** (sp.beta + 1) * self.R
        fs = s**sp.p * self.P - self.ku * self.A * s**self.ku - coup
        ft = t**sp.q * self.Q - self.kv * self.B * t**self.kv - coup
        return fs, ft

    def relative_residuals(self, s, t):
        sp = self.spec
        fs, ft = self.partials(s, t)
        coup = s ** (sp.alpha + 1) * t ** (sp.beta + 1) * self.R
        ss = max(s**sp.p * self.P, coup, abs(self.ku * self.A) * s**self.ku)
        st = max(t**sp.q * self.Q, coup, abs(self.kv * self.B) * t**self.kv)
        return fs / ss, ft / st


def system_fiber(spec: ProblemSpec, u: Field, v: Field) -> SystemFiber:
    A = spec.lam * perturbation_integral(spec.perturbation_f, u) if spec.lam else 0.0
    B = spec.mu * perturbation_integral(spec.perturbation_g, v) if spec.mu else 0.0
    return SystemFiber(spec, eval_P(spec, u), eval_Q(spec, v), eval_R(spec, u, v), A, B)


def s0_t0(spec: ProblemSpec, P: float, Q: float, R: float) -> tuple[float, float]:
    """Closed-form scalings onto the Nehari set of I_{0,0}.

    The two conditions s^p P = s^(a+1) t^(b+1) R = t^q Q are linear in
    (log s, log t); Cramer's rule keeps the result exactly symmetric under
    swapping the components when p = q and alpha = beta.
    """
    r_exponent(spec)
    a1, b1, p, q = spec.alpha + 1, spec.beta + 1, spec.p, spec.q
    x = math.log(R) - math.log(P)
    y = math.log(R) - math.log(Q)
    det = (p - a1) * (q - b1) - a1 * b1
    log_s = (x * (q - b1) + b1 * y) / det
    log_t = ((p - a1) * y + a1 * x) / det
    return math.exp(log_s), math.exp(log_t)


def _check_pair(spec: ProblemSpec, u: Field, v: Field):
    check_same_grid(u, v)
    if u.is_zero() or v.is_zero():
        raise ProjectionError("both components must be nonzero")


def project_system(spec: ProblemSpec, u: Field, v: Field, branch: str = "lowest") -> NehariPoint:
    """Scale the pair onto the Nehari set of I_{lambda,mu}.

    Explicit for lambda = mu = 0; otherwise a 2D root solve in log-scalings
    seeded from the explicit solution.
    """
    spec.check_system()
    _check_pair(spec, u, v)
    fib = system_fiber(spec, u, v)
    if fib.R == 0:
        raise ProjectionError("coupling integral R(u, v) vanishes; projection undefined")
    if fib.P == 0 or fib.Q == 0:
        raise ProjectionError("degenerate ray pair: zero gradient energy")
    s0, t0 = s0_t0(spec, fib.P, fib.Q, fib.R)
    if fib.A == 0 and fib.B == 0:
        cands = [(s0, t0)]
    else:
        cands = _system_roots(fib, s0, t0)
        if not cands:
            raise ProjectionError("no positive critical point of the two-parameter fiber")
    energies = [float(fib.energy(s, t)) for s, t in cands]
    i = int(np.argmin(energies) if branch == "lowest" else np.argmax(energies))
    s, t = cands[i]
    ws, wt = s * u, t * v
    res = fib.relative_residuals(s, t)
    return NehariPoint((ws, wt), (s, t), eval_I(spec, ws, wt), tuple(float(x) for x in res),
                       converged=max(abs(res[0]), abs(res[1])) < SYSTEM_TOL,
                       info={"fiber_critical_points": len(cands)})


def _system_roots(fib: SystemFiber, s0: float, t0: float) -> list[tuple[float, float]]:
    def eqs(x):
        if max(abs(x[0]), abs(x[1])) > 300:
            return [1e3, 1e3]
        with np.errstate(all="ignore"):
            res = fib.relative_residuals(np.exp(x[0]), np.exp(x[1]))
        return [float(r) if np.isfinite(r) else 1e3 for r in res]

    found: list[tuple[float, float]] = []
    for fs in (1.0, 1e-1, 1e-2, 1e-4, 1e-6, 10.0):
        for ft in (1.0, 1e-1, 1e-2, 1e-4, 1e-6, 10.0):
            sol = root(eqs, [math.log(s0 * fs), math.log(t0 * ft)], method="hybr", tol=1e-14)
            if not sol.success or max(abs(e) for e in eqs(sol.x)) > 1e-10:
                continue
            s, t = math.exp(sol.x[0]), math.exp(sol.x[1])
            if all(abs(s - a) > 1e-7 * a or abs(t - b) > 1e-7 * b for a, b in found):
                found.append((s, t))
    return found


def k_functional(spec: ProblemSpec, X: Field, Y: Field) -> float:
    """Ray-invariant energy level of the I_{0,0}-projection, up to (alpha+1)(1/p - 1/r)."""
    R = eval_R(spec, X, Y)
    if R == 0:
        raise ProjectionError("coupling integral R(X, Y) vanishes")
    return k_from_moments(spec, eval_P(spec, X), eval_Q(spec, Y), R)


def k_from_moments(spec: ProblemSpec, P: float, Q: float, R: float) -> float:
    r = r_exponent(spec)
    a1, b1, p, q = spec.alpha + 1, spec.beta + 1, spec.p, spec.q
    # evaluated in logs: the raw bracket over/underflows for concentrated fields
    logk = (a1 * math.log(P) + b1 * p / q * math.log(Q) - p * math.log(R)) * r / (a1 * (r - p))
    return math.exp(logk)


def level_factor(spec: ProblemSpec) -> float:
    """(alpha+1)(1/p - 1/r)."""
    return (spec.alpha + 1) * (1.0 / spec.p - 1.0 / r_exponent(spec))


def exponent_identities(spec: ProblemSpec, ell: float = 1.0) -> dict:
    """Residuals of the exponent identities of an admissible system spec.

    ``level_factor``: (alpha+1)/p + (beta+1)/q - 1 against (alpha+1)(1/p - 1/r).
    ``r_gap``: r - p, positive.  ``k_collapse``: K at P = Q = R = ell, against ell.
    ``equal_exponents``: for p = q, (alpha+1)(1/p - 1/r) against p/(N-p).
    """
    r = r_exponent(spec)
    a1, b1 = spec.alpha + 1, spec.beta + 1
    lf = level_factor(spec)
    direct = a1 / spec.p + b1 / spec.q - 1.0
    out = {"r": r, "r_gap": r - spec.p,
           "level_factor": lf,
           "level_factor_error": abs(lf - direct) / abs(direct),
           "k_collapse_error": abs(k_from_moments(spec, ell, ell, ell) - ell) / ell,
           "coupling_defect": spec.coupling_defect()}
    if spec.p == spec.q:
        target = spec.p / (spec.dim - spec.p)
        out["equal_exponents_error"] = abs(lf - target) / target
    return out
