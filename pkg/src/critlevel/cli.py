"""Config-driven experiment runner.

    critlevel SUBCOMMAND [--config FILE] [--set section.key=value ...] [--output-dir DIR]

Exit codes: 0 success, 1 invalid configuration or parameters, 2 solver
non-convergence or a failed identity check, 3 untrusted Sobolev truncation.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bubbles import (
    BubbleSpec,
    adjudicate_limit,
    concentration_profile,
    estimate_sobolev_constant,
    psi_norms,
    psi_sequence,
    sobolev_constant,
)
from .errors import ParameterError, ProjectionError
from .functionals import ProblemSpec, sample_admissible_system
from .grid import build_radial_grid
from .nehari import exponent_identities
from .psdiag import BALL_FRACTION, build_noncompact_ps, ps_check
from .report import write_csv, write_json
from .solver import (
    SolveConfig,
    critical_level_scalar,
    critical_level_system,
    holder_lower_bound,
    minimize_scalar_nehari,
    minimize_system_nehari,
    equal_exponent_level,
)

log = logging.getLogger("critlevel")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_UNTRUSTED = 0, 1, 2, 3
OUTPUT_ENV = "NEHARI_OUTPUT_DIR"
DEFAULT_OUTPUT = "critlevel-output"

DEFAULT_CONFIG = {
    "problem": {"dim": 5, "p": 2.0, "q": None, "alpha": 0.0, "beta": 0.0,
                "lambda": 0.01, "mu": 0.0, "system": False,
                "perturbation_f": {"tag": "power", "exponent": 1.5},
                "perturbation_g": {"tag": "none"}},
    "grid": {"radius": 8.0, "nodes": 2000, "grading": 4.0},
    "solve": {"max_iterations": 2000, "initial_step": 1.0, "shrink": 0.5,
              "slope_fraction": 1e-4, "stationarity_tol": 1e-7, "initial_field": "bump",
              "bubble_epsilon": 0.05, "branch": "lowest", "energy_floor": -1e12},
    "bubble": {"epsilon": 1.0, "cutoff_fraction": 0.5, "n_values": [2, 4, 8, 16, 32]},
    "sobolev": {"radius": 4096.0, "nodes": 4000, "grading": 8.0,
                "epsilons": [1.0, 0.25, 0.0625]},
    "sweep": {"lambda": [0.0, 0.005, 0.01, 0.02], "mu": [0.0]},
    "identities": {"samples": 1000, "tolerance": 1e-12},
    "output_dir": None,
    "seed": 42,
}

CSV_COLUMNS = {
    "ground-state": "ground_state_u.csv (r, value); systems add ground_state_v.csv",
    "critical-level": "no CSV; critical_level.json",
    "sobolev": "sobolev.csv (epsilon, value, grad_norm_p, crit_norm, truncation_indicator, trusted)",
    "bubble-diag": "bubble_diag.csv (n, crit_norm, grad_norm, mass_fraction)",
    "ps-demo": "ps_demo.csv (n, level, residual_grad, residual_crit, bl_defect, mass_fraction)",
    "sweep": "sweep.csv (lambda, mu, inf_J0, inf_J_lambda, c_star, converged)",
    "identities": "identities.csv (check, value, tolerance, result)",
}


class ConfigError(ParameterError):
    pass


# -- configuration -------------------------------------------------------------------

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        path = f"{where}{k}"
        if k not in out:
            raise ConfigError(f"unknown config field {path!r}")
        if isinstance(out[k], dict) and k not in ("perturbation_f", "perturbation_g"):
            if not isinstance(v, dict):
                raise ConfigError(f"config field {path!r} must be an object")
            out[k] = _merge(out[k], v, path + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``a.b.c=value`` override in place; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config section {key!r}")
        node = node[part]
    leaf = parts[-1]
    in_perturbation = len(parts) > 1 and parts[-2] in ("perturbation_f", "perturbation_g")
    if leaf not in node and not (in_perturbation and leaf in ("tag", "exponent")):
        raise ConfigError(f"unknown config field {key!r}")
    node[leaf] = _parse_value(text)
    return cfg


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, data)
    for o in overrides:
        cfg = apply_override(cfg, o)
    return cfg


def problem_from_config(cfg: dict) -> tuple[ProblemSpec, bool]:
    pr = dict(cfg["problem"])
    system = bool(pr.pop("system", False))
    try:
        spec = ProblemSpec.from_dict(pr)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid problem section: {exc}") from exc
    if system:
        spec.check_system()
    return spec, system


def grid_from_config(cfg: dict, dim: int):
    g = cfg["grid"]
    return build_radial_grid(dim, float(g["radius"]), int(g["nodes"]), float(g["grading"]))


def solve_from_config(cfg: dict) -> SolveConfig:
    s = dict(cfg["solve"])
    s["seed"] = int(cfg["seed"])
    try:
        return SolveConfig(**s)
    except TypeError as exc:
        raise ConfigError(f"invalid solve section: {exc}") from exc


def resolve_output_dir(cfg: dict, flag=None) -> Path:
    out = flag or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


# -- subcommands -----------------------------------------------------------------------

def cmd_ground_state(cfg, out: Path) -> int:
    spec, system = problem_from_config(cfg)
    grid = grid_from_config(cfg, spec.dim)
    conf = solve_from_config(cfg)
    try:
        point = (minimize_system_nehari if system else minimize_scalar_nehari)(spec, grid, conf)
    except ProjectionError as exc:
        log.error("projection failed: %s", exc)
        return EXIT_NONCONVERGED
    point.u.to_csv(out / "ground_state_u.csv")
    if system:
        point.v.to_csv(out / "ground_state_v.csv")
    write_json(out / "ground_state.json", {"problem": spec.to_dict(), "solve": conf.to_dict(),
                                           "grid": cfg["grid"], "result": point.to_dict()})
    print(f"energy {point.energy:.17g}  status {point.info.get('status')}")
    return EXIT_OK if point.converged else EXIT_NONCONVERGED


def cmd_critical_level(cfg, out: Path) -> int:
    spec, system = problem_from_config(cfg)
    grid = grid_from_config(cfg, spec.dim)
    conf = solve_from_config(cfg)
    rep = (critical_level_system if system else critical_level_scalar)(spec, grid, conf)
    write_json(out / "critical_level.json", {"problem": spec.to_dict(), "report": rep.to_dict()})
    print(f"c_star {rep.c_star:.17g} = {rep.inf_J0:.17g} + {rep.inf_J_lambda:.17g}")
    if not rep.provenance.get("sobolev_trusted", True):
        return EXIT_UNTRUSTED
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def cmd_sobolev(cfg, out: Path) -> int:
    spec, _ = problem_from_config(cfg)
    s = cfg["sobolev"]
    grid = build_radial_grid(spec.dim, float(s["radius"]), int(s["nodes"]), float(s["grading"]))
    rows, ests = [], []
    for eps in s["epsilons"]:
        est = estimate_sobolev_constant(BubbleSpec(float(eps), 0.5 * grid.radius, grid), spec)
        ests.append(est.to_dict())
        rows.append((est.epsilon, est.value, est.grad_norm_p, est.crit_norm,
                     est.truncation_indicator, est.trusted))
    write_csv(out / "sobolev.csv", ["epsilon", "value", "grad_norm_p", "crit_norm",
                                    "truncation_indicator", "trusted"], rows)
    vals = [r[1] for r in rows]
    spread = (max(vals) - min(vals)) / min(vals)
    write_json(out / "sobolev.json", {"dim": spec.dim, "p": spec.p, "estimates": ests,
                                      "relative_spread": spread})
    for r in rows:
        print(f"eps {r[0]:.6g}  S {r[1]:.17g}  truncation {r[4]:.3e}  trusted {r[5]}")
    return EXIT_OK if all(r[5] for r in rows) else EXIT_UNTRUSTED


def _bubble_spec(cfg, grid) -> BubbleSpec:
    b = cfg["bubble"]
    return BubbleSpec(float(b["epsilon"]), float(b["cutoff_fraction"]) * grid.radius, grid)


def cmd_bubble_diag(cfg, out: Path) -> int:
    spec, _ = problem_from_config(cfg)
    grid = grid_from_config(cfg, spec.dim)
    bs = _bubble_spec(cfg, grid)
    ns = [int(n) for n in cfg["bubble"]["n_values"]]
    rho = BALL_FRACTION * grid.radius
    rows = []
    for n, crit, grad in psi_norms(bs, spec, ns):
        psi = psi_sequence(bs, spec, n)
        rows.append((n, crit, grad, concentration_profile(psi, [rho], spec.p_star)[0][1]))
    write_csv(out / "bubble_diag.csv", ["n", "crit_norm", "grad_norm", "mass_fraction"], rows)
    est = sobolev_constant(spec.dim, spec.p)
    rep = adjudicate_limit(bs, spec, ns, sobolev=est.value)
    write_json(out / "bubble_diag.json", {"ball_radius": rho, "limit": rep.to_dict(),
                                          "sobolev_trusted": est.trusted})
    print(f"common limit {rep.common_limit:.17g} matches {rep.match}")
    return EXIT_OK if est.trusted else EXIT_UNTRUSTED


def cmd_ps_demo(cfg, out: Path) -> int:
    spec, system = problem_from_config(cfg)
    grid = grid_from_config(cfg, spec.dim)
    conf = solve_from_config(cfg)
    if system:
        rep = critical_level_system(spec, grid, conf)
        base = minimize_system_nehari(spec, grid, conf) if rep.attained else None
    else:
        rep = critical_level_scalar(spec, grid, conf)
        base = minimize_scalar_nehari(spec, grid, conf) if rep.attained else None
    ns = [int(n) for n in cfg["bubble"]["n_values"]]
    seq = build_noncompact_ps(spec, base, _bubble_spec(cfg, grid), ns)
    if base is not None:
        limit = base.fields
    else:
        limit = tuple(f * 0.0 for f in (seq[0] if system else (seq[0],)))
    ps = ps_check(spec, seq, rep.c_star, weak_limit=limit, labels=ns)
    ps.to_csv(out / "ps_demo.csv")
    write_json(out / "ps_demo.json", {"problem": spec.to_dict(), "critical_level": rep.to_dict(),
                                      "base_energy": base.energy if base else 0.0,
                                      "report": ps.to_dict()})
    for n, lev, *_ , mass in ps.rows():
        print(f"n {n:4d}  level {lev:.17g}  mass {mass:.6f}")
    print(f"c_star {rep.c_star:.17g}  verdict {ps.verdict}")
    if not rep.provenance.get("sobolev_trusted", True):
        return EXIT_UNTRUSTED
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def cmd_sweep(cfg, out: Path) -> int:
    spec, system = problem_from_config(cfg)
    grid = grid_from_config(cfg, spec.dim)
    conf = solve_from_config(cfg)
    lams = [float(x) for x in cfg["sweep"]["lambda"]]
    mus = [float(x) for x in cfg["sweep"]["mu"]] if system else [spec.mu]
    rows, status = [], EXIT_OK
    base = spec.to_dict()
    for lam in lams:
        for mu in mus:
            sp = ProblemSpec.from_dict({**base, "lambda": lam, "mu": mu})
            rep = (critical_level_system if system else critical_level_scalar)(sp, grid, conf)
            rows.append((lam, mu, rep.inf_J0, rep.inf_J_lambda, rep.c_star, rep.converged))
            if not rep.converged:
                status = EXIT_NONCONVERGED
            if not rep.provenance.get("sobolev_trusted", True):
                status = EXIT_UNTRUSTED
    write_csv(out / "sweep.csv", ["lambda", "mu", "inf_J0", "inf_J_lambda", "c_star", "converged"], rows)
    for r in rows:
        print(" ".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in r))
    return status


def cmd_identities(cfg, out: Path) -> int:
    idc = cfg["identities"]
    tol = float(idc["tolerance"])
    rows = []

    def add(name, value, bound, ok):
        rows.append((name, float(value), float(bound), "PASS" if ok else "FAIL"))

    spec, system = problem_from_config(cfg)
    if system:
        ident = exponent_identities(spec, ell=math.pi)
        add("r", ident["r"], 0.0, ident["r_gap"] > 0)
        add("level_factor", ident["level_factor"], 0.0, True)
        add("level_factor_vs_direct_sum", ident["level_factor_error"], tol,
            ident["level_factor_error"] <= tol)
        add("k_collapse", ident["k_collapse_error"], tol, ident["k_collapse_error"] <= tol)
        if spec.p == spec.q:
            add("level_factor_vs_p/(N-p)", ident["equal_exponents_error"], tol,
                ident["equal_exponents_error"] <= tol)
            S = sobolev_constant(spec.dim, spec.p).value
            hb, pv = holder_lower_bound(spec, S, S), equal_exponent_level(spec, S)
            add("holder_bound_vs_equal_exponent_level", abs(hb - pv) / pv, tol, abs(hb - pv) <= tol * pv)
    rng = np.random.default_rng(int(cfg["seed"]))
    worst = {"level_factor_error": 0.0, "k_collapse_error": 0.0}
    min_gap = math.inf
    for _ in range(int(idc["samples"])):
        sp = sample_admissible_system(rng)
        ident = exponent_identities(sp, ell=float(rng.uniform(0.1, 100.0)))
        for k in worst:
            worst[k] = max(worst[k], ident[k])
        min_gap = min(min_gap, ident["r_gap"])
    add("random_level_factor_max_error", worst["level_factor_error"], tol, worst["level_factor_error"] <= tol)
    add("random_k_collapse_max_error", worst["k_collapse_error"], tol, worst["k_collapse_error"] <= tol)
    add("random_min_r_minus_p", min_gap, 0.0, min_gap > 0)
    write_csv(out / "identities.csv", ["check", "value", "tolerance", "result"], rows)
    for name, value, bound, res in rows:
        print(f"{name:34s} {value:.17g}  {res}")
    return EXIT_OK if all(r[3] == "PASS" for r in rows) else EXIT_NONCONVERGED


COMMANDS = {
    "ground-state": (cmd_ground_state, "Nehari minimization (scalar, or system with problem.system=true)"),
    "critical-level": (cmd_critical_level, "critical level c* and its two summands"),
    "sobolev": (cmd_sobolev, "Sobolev quotient of the Talenti profile over sobolev.epsilons"),
    "bubble-diag": (cmd_bubble_diag, "norms and concentration of the cut-off bubbles psi_n"),
    "ps-demo": (cmd_ps_demo, "non-compact Palais-Smale sequence and its diagnostics"),
    "sweep": (cmd_sweep, "critical levels over sweep.lambda (and sweep.mu for systems)"),
    "identities": (cmd_identities, "exponent identities and equal-exponent self-tests"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="critlevel", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=f"{help_text}.\nOutput: {CSV_COLUMNS[name]}.",
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file; missing fields take defaults")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. problem.lambda=1.5")
        p.add_argument("--output-dir", help=f"output directory (else config output_dir, ${OUTPUT_ENV}, "
                                            f"or ./{DEFAULT_OUTPUT})")
    return parser


def run(command: str, config_path=None, overrides=(), output_dir=None) -> int:
    if command not in COMMANDS:
        log.error("unknown subcommand %r", command)
        return EXIT_INVALID
    try:
        cfg = load_config(config_path, overrides)
        out = resolve_output_dir(cfg, output_dir)
        write_json(out / "config.json", cfg)
        return COMMANDS[command][0](cfg, out)
    except (ParameterError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.overrides, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
