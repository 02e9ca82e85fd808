"""Command-line front end.

Subcommands::

    rescurve generate   build a test problem (JSON)
    rescurve sweep      Tikhonov residual sweep (CSV alpha,residual,xnorm,gradnorm)
    rescurve estimate   stages, smoothness and noise level (JSON)
    rescurve choose     regularization parameter rules (CSV + JSON)
    rescurve reproduce  preset experiments: fig1 fig2 table1 fig3 fig4 rates

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are the long option names (dashes or underscores); flags given on the
command line override it. Without an explicit ``-o``/``--out-dir`` the
artifacts go to ``$RESCURVE_OUTPUT_DIR/<command>-<hash>`` (default base
``./rescurve-runs``), where the hash is taken over the resolved options.

Exit codes: 0 success, 2 bad input, 3 numerical failure (solver did not
converge), 4 estimation not possible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, param_choice
from .operators import OperatorError, load_mtx, load_vector_csv, normalize
from .problems import (
    NoiseSpec,
    ProblemError,
    ProblemInstance,
    SmoothnessSpec,
    add_noise,
    load_problem,
    make_model_problem,
    make_spectral_problem,
    save_problem,
)
from .solver import (
    DEFAULT_MAXIT,
    DEFAULT_Q,
    DEFAULT_STEPS,
    DEFAULT_TOL,
    AlphaGrid,
    ConvergenceError,
    SolverError,
    read_sweep_csv,
    sweep,
    write_sweep_csv,
)

log = logging.getLogger("rescurve")

ENV_OUTPUT = "RESCURVE_OUTPUT_DIR"
DEFAULT_OUTPUT_BASE = "rescurve-runs"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_ESTIMATE = 4

PRESETS = ("fig1", "fig2", "table1", "fig3", "fig4", "rates")
RATE_LEVELS = (0.02, 0.01, 0.005, 0.0025, 0.00125)
# noise levels for the generalized-smoothness presets; the log class needs
# a low level for its convex stretch to clear the plateau
FIG3_NOISE = 0.005
FIG4_NOISE = 1e-4


class InputError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved options of one invocation; the hash names the run directory."""

    command: str
    params: dict = field(default_factory=dict)

    def canonical(self) -> str:
        return json.dumps({"command": self.command, "params": self.params}, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def to_text(self) -> str:
        lines = [f"# rescurve {self.command}"]
        for k in sorted(self.params):
            v = self.params[k]
            if v is not None:
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# ---------------------------------------------------------------- helpers


def _grid(args) -> AlphaGrid:
    return AlphaGrid(args.alpha0, args.q, args.steps)


def _run_dir(args, command) -> Path:
    base = Path(args.out_dir or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT_BASE)
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config", "out_dir", "output")}
    cfg = ExperimentConfig(command, params)
    d = base / f"{command}-{cfg.digest()}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(cfg.to_text())
    return d


def _target(args, command, default_name) -> Path:
    if args.output:
        p = Path(args.output)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    return _run_dir(args, command) / default_name


def _external_problem(matrix, data) -> ProblemInstance:
    op = normalize(load_mtx(matrix))
    y = load_vector_csv(data)
    if y.size != op.dims[0]:
        raise InputError(f"data has {y.size} entries, matrix has {op.dims[0]} rows")
    return ProblemInstance(operator=op, y_noisy=y, meta={"problem": "external", "matrix": str(matrix), "data": str(data)})


def _problem_from_args(args) -> ProblemInstance:
    if args.problem and args.matrix:
        raise InputError("give either a problem file or --matrix/--data, not both")
    if args.problem:
        return load_problem(args.problem)
    if args.matrix and args.data:
        return _external_problem(args.matrix, args.data)
    raise InputError("need a problem file or both --matrix and --data")


def _run_sweep(p, grid, tol=DEFAULT_TOL, maxit=DEFAULT_MAXIT):
    try:
        return sweep(p, grid, tol=tol, maxit=maxit)
    except ConvergenceError as exc:
        bad = ", ".join(f"{a:.3g}" for a in exc.unconverged)
        raise ConvergenceError(f"{exc}; unconverged alphas: {bad}", exc.results) from exc


def _thresholds(args) -> analysis.Thresholds:
    kw = {}
    if getattr(args, "curvature_threshold", None) is not None:
        kw["curvature"] = args.curvature_threshold
    if getattr(args, "min_fit_points", None) is not None:
        kw["min_fit_points"] = args.min_fit_points
    return analysis.Thresholds(**kw)


def _estimate_report(c, ynorm, thr, problem=None, correct_noise=True) -> tuple[dict, bool]:
    seg, smooth, noise = analysis.estimate(c, ynorm, thr, correct_noise=correct_noise)
    report = json.loads(analysis.estimates_to_json(seg, smooth, noise))
    if problem is not None:
        truth = {"mu_star": problem.meta.get("mu_star"), "delta_true": problem.delta_true}
        if truth["mu_star"] is not None and np.isfinite(smooth.mu):
            truth["mu_error"] = smooth.mu - truth["mu_star"]
        if noise.found and problem.delta_true:
            truth["delta_relative_error"] = (noise.delta_hat - problem.delta_true) / problem.delta_true
        report["truth"] = truth
    ok = smooth.classification != analysis.NOISE and noise.found
    return report, ok


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    kind = {"holder": "holder", "model": "holder", "exp": "exponential", "exponential": "exponential",
            "log": "logarithmic", "logarithmic": "logarithmic"}[args.model]
    if kind == "holder":
        p = make_model_problem(args.eta, args.beta, args.n)
    else:
        if args.kappa is None:
            raise InputError(f"--model {args.model} needs --kappa")
        p = make_spectral_problem(SmoothnessSpec(kind, n=args.n, kappa=args.kappa), args.beta)
    p = add_noise(p, NoiseSpec(args.noise, args.seed, args.off_range))
    out = _target(args, "generate", "problem.json")
    save_problem(p, out)
    print(f"delta_true={p.delta_true:.17g}")
    if "mu_star" in p.meta:
        print(f"mu_star={p.meta['mu_star']:.17g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    p = _problem_from_args(args)
    s = _run_sweep(p, _grid(args), args.tol, args.maxit)
    out = _target(args, "sweep", "sweep.csv")
    write_sweep_csv(s, out)
    print(f"ynorm={p.ynorm:.17g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    s = read_sweep_csv(args.sweep)
    problem = load_problem(args.problem) if args.problem else None
    ynorm = args.ynorm if args.ynorm is not None else (problem.ynorm if problem else None)
    try:
        c = analysis.residual_curve(s)
    except analysis.AnalysisError as exc:
        raise InputError(str(exc)) from exc
    report, ok = _estimate_report(c, ynorm, _thresholds(args), problem, not args.no_noise_correction)
    out = _target(args, "estimate", "estimate.json")
    _write_json(out, report)
    analysis.write_curve_csv(c, out.with_name(out.stem + "_curve.csv"))
    sm = report["smoothness"]
    print(f"classification={sm['classification']} mu={sm['mu']} delta_hat={report['noise']['delta_hat']}")
    print(f"wrote {out}")
    return EXIT_OK if ok else EXIT_ESTIMATE


def _rules(text):
    return tuple(r.strip() for r in text.split(",") if r.strip())


def cmd_choose(args) -> int:
    rules = _rules(args.rules)
    for r in rules:
        try:
            param_choice._parse_rule(r)
        except param_choice.ChoiceError as exc:
            raise InputError(str(exc)) from exc
    if args.problem:
        p = load_problem(args.problem)
        results = param_choice.compare_rules(
            p, _grid(args), rules, delta=args.delta, mu=args.mu, rho=args.rho, s=_run_sweep(p, _grid(args))
        )
    elif args.sweep:
        s = read_sweep_csv(args.sweep)
        results = param_choice.compare_rules(None, None, rules, delta=args.delta, mu=args.mu, rho=args.rho, s=s)
    else:
        raise InputError("need --problem or --sweep")
    out = _target(args, "choose", "choices.csv")
    out.write_text(param_choice.choices_to_csv(results))
    out.with_suffix(".json").write_text(param_choice.choices_to_json(results) + "\n")
    for c in results:
        print(f"{c.rule}: " + (f"alpha={c.alpha:.6g}" if c.ok else f"failed ({c.failure})"))
    print(f"wrote {out}")
    return EXIT_OK if any(c.ok for c in results) else EXIT_ESTIMATE


# ---------------------------------------------------------------- presets


def _curve_artifacts(d: Path, name, p, grid, thr):
    s = _run_sweep(p, grid)
    write_sweep_csv(s, d / f"{name}_sweep.csv")
    c = analysis.residual_curve(s)
    analysis.write_curve_csv(c, d / f"{name}_curve.csv")
    report, _ = _estimate_report(c, p.ynorm, thr, p)
    _write_json(d / f"{name}_estimate.json", report)
    return c, report


def _stage_labels(n, seg):
    labels = ["transition"] * n
    for name in ("burn_in", "approximation", "plateau", "floor"):
        i, j = getattr(seg, name)
        for k in range(i, j):
            labels[k] = name
    return labels


def run_preset(name, seed, out: Path, grid: AlphaGrid | None = None) -> dict:
    """Run one preset experiment into ``out``; returns a summary dict."""
    grid = grid or AlphaGrid()
    thr = analysis.Thresholds()
    out.mkdir(parents=True, exist_ok=True)
    model = make_model_problem(2, 2)
    noisy = lambda p, lev: add_noise(p, NoiseSpec(lev, seed))  # noqa: E731

    if name == "fig1":
        _, clean = _curve_artifacts(out, "clean", model, grid, thr)
        _, nz = _curve_artifacts(out, "noisy", noisy(model, 0.005), grid, thr)
        return {"clean": clean, "noisy": nz}

    if name == "fig2":
        p = noisy(model, 0.005)
        s = _run_sweep(p, grid)
        c = analysis.residual_curve(s)
        seg, smooth, noise = analysis.estimate(c, p.ynorm, thr)
        labels = _stage_labels(len(c), seg)
        lines = ["alpha,residual,dr,stage"]
        for a, r, d, lab in zip(c.alphas, c.r, c.dr, labels):
            lines.append(f"{a:.17g},{r:.17g},{'' if np.isnan(d) else f'{d:.17g}'},{lab}")
        (out / "stages.csv").write_text("\n".join(lines) + "\n")
        summary = json.loads(analysis.estimates_to_json(seg, smooth, noise))
        _write_json(out / "stages.json", summary)
        return summary

    if name == "table1":
        p = noisy(model, 0.005)
        res = param_choice.compare_rules(p, grid, param_choice.TABLE1_RULES)
        (out / "table1.csv").write_text(param_choice.choices_to_csv(res))
        (out / "table1.json").write_text(param_choice.choices_to_json(res) + "\n")
        return {c.rule: c.alpha for c in res}

    if name in ("fig3", "fig4"):
        kind, kappa, lev = ("exponential", 2.0, FIG3_NOISE) if name == "fig3" else ("logarithmic", 1.5, FIG4_NOISE)
        p = make_spectral_problem(SmoothnessSpec(kind, kappa=kappa), 2.0)
        _, clean = _curve_artifacts(out, "clean", p, grid, thr)
        _, nz = _curve_artifacts(out, "noisy", noisy(p, lev), grid, thr)
        return {"clean": clean, "noisy": nz}

    if name == "rates":
        summary = rate_experiment(seed, grid)
        lines = ["relative_level,delta,alpha_dp,error"]
        for row in summary["runs"]:
            lines.append(",".join(f"{row[k]:.17g}" for k in ("relative_level", "delta", "alpha", "error")))
        (out / "rates.csv").write_text("\n".join(lines) + "\n")
        _write_json(out / "rates.json", {k: v for k, v in summary.items() if k != "runs"})
        return summary

    raise InputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def rate_experiment(seed=42, grid=None, levels=RATE_LEVELS, tau=1.1, eta=2.0, beta=2.0):
    """Discrepancy-principle errors over noise levels and their log-log slope."""
    model = make_model_problem(eta, beta)
    runs = []
    for lev in levels:
        p = add_noise(model, NoiseSpec(lev, seed))
        s = sweep(p, grid)
        a, _ = param_choice.choose_discrepancy(s, p.delta_true, tau, problem=p)
        err = float(np.linalg.norm(param_choice.solve_at(p, a).x - p.x_true))
        runs.append({"relative_level": lev, "delta": p.delta_true, "alpha": a, "error": err})
    slope = float(np.polyfit(np.log([r["delta"] for r in runs]), np.log([r["error"] for r in runs]), 1)[0])
    mu = model.meta["mu_star"]
    return {"slope": slope, "expected": 2 * mu / (2 * mu + 1), "tau": tau, "seed": seed, "runs": runs}


def cmd_reproduce(args) -> int:
    if args.preset not in PRESETS:
        raise InputError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
    d = _run_dir(args, f"reproduce-{args.preset}")
    summary = run_preset(args.preset, args.seed, d, _grid(args))
    if args.preset == "rates":
        print(f"slope={summary['slope']:.4f} expected={summary['expected']:.4f}")
    print(f"wrote {d}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_grid(sp):
    sp.add_argument("--alpha0", type=float, default=1.0, help="largest alpha (default 1)")
    sp.add_argument("--q", type=float, default=DEFAULT_Q, help="grid ratio in (0,1) (default 10^-0.1)")
    sp.add_argument("--steps", type=int, default=DEFAULT_STEPS, help="number of grid points (default 121)")


def _add_common(sp):
    sp.add_argument("--config", help="flat key = value file; flags override it")
    sp.add_argument("--out-dir", help=f"base directory for run directories (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT_BASE})")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="rescurve", description="Tikhonov residual-curve analysis.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    g = sub.add_parser("generate", help="build a test problem")
    g.add_argument("--model", choices=["holder", "model", "exp", "exponential", "log", "logarithmic"], default="holder")
    g.add_argument("--eta", type=float, default=2.0)
    g.add_argument("--beta", type=float, default=2.0)
    g.add_argument("--kappa", type=float)
    g.add_argument("--n", type=int, default=4096)
    g.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--off-range", type=float, default=0.0, help="share of noise energy outside the range")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_generate)
    subs["generate"] = g

    s = sub.add_parser("sweep", help="residual sweep over an alpha grid")
    s.add_argument("problem", nargs="?", help="problem JSON")
    s.add_argument("--matrix", help="Matrix Market operator (normalized to unit norm)")
    s.add_argument("--data", help="one-column CSV data vector")
    _add_grid(s)
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--maxit", type=int, default=DEFAULT_MAXIT)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)
    subs["sweep"] = s

    e = sub.add_parser("estimate", help="estimate smoothness and noise level")
    e.add_argument("sweep", help="sweep CSV")
    e.add_argument("--problem", help="problem JSON for ||y|| and a truth comparison")
    e.add_argument("--ynorm", type=float, help="norm of the data vector")
    e.add_argument("--curvature-threshold", type=float)
    e.add_argument("--min-fit-points", type=int)
    e.add_argument("--no-noise-correction", action="store_true")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_estimate)
    subs["estimate"] = e

    c = sub.add_parser("choose", help="apply parameter choice rules")
    c.add_argument("--problem", help="problem JSON (enables error ratios)")
    c.add_argument("--sweep", help="sweep CSV (rules without ground truth)")
    c.add_argument("--rules", default=",".join(param_choice.TABLE1_RULES + ("lcurve",)))
    c.add_argument("--delta", type=float)
    c.add_argument("--mu", type=float)
    c.add_argument("--rho", type=float)
    _add_grid(c)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_choose)
    subs["choose"] = c

    r = sub.add_parser("reproduce", help="run a preset experiment")
    r.add_argument("preset", help=" | ".join(PRESETS))
    r.add_argument("--seed", type=int, default=42)
    _add_grid(r)
    r.set_defaults(func=cmd_reproduce)
    subs["reproduce"] = r

    for sp in subs.values():
        _add_common(sp)
    return parser, subs


def _apply_config(sp: argparse.ArgumentParser, cfg: dict, known=()):
    """Set ``sp`` defaults from ``cfg``.

    Keys belonging to another subcommand (listed in ``known``) are skipped so
    that one file can drive a whole pipeline.
    """
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in cfg.items():
        act = actions.get(key)
        if key in ("help", "config") or (act is None and key not in known):
            raise InputError(f"unknown config key {key!r}")
        if act is None or not act.option_strings:
            continue
        if isinstance(act, argparse._StoreTrueAction):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise InputError(f"config key {key!r} needs a boolean")
            defaults[key] = low in ("true", "1", "yes")
        elif act.type is not None:
            try:
                defaults[key] = act.type(raw)
            except ValueError as exc:
                raise InputError(f"config key {key!r}: {exc}") from exc
        else:
            defaults[key] = raw
    sp.set_defaults(**defaults)


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        cfg_path = _config_path(argv)
        if cfg_path:
            cmd = next((a for a in argv if a in subs), None)
            if cmd is None:
                raise InputError("--config needs a subcommand")
            known = {a.dest for sp in subs.values() for a in sp._actions if a.option_strings}
            _apply_config(subs[cmd], read_config(cfg_path), known)
    except InputError as exc:
        print(f"rescurve: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"rescurve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ProblemError, OperatorError, SolverError, param_choice.ChoiceError, OSError, ValueError, KeyError) as exc:
        print(f"rescurve: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
