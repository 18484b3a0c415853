"""Command-line entry point: generate problems, run solvers, compute spectral
reports, and drive experiments from JSON configs.

Exit codes: 0 success, 1 validation/usage error, 2 gate failure under --check.
Every invocation writes a manifest.json holding the config hash, resolved
parameters, seeds, and library versions — enough to reproduce the outputs
byte-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import ExperimentSpec, run_experiment
from .kernels import ExpectationMode, SamplerSpec, exact_mode, mc_mode
from .problems import GeneratorSpec, generate, load_problem, problem_from_dict, save_problem
from .solvers import SolverConfig, run
from .spectral import compute_report, find_lambda0, m_spectrum

SCHEMAS = {
    "generate": {"kind": "svd_conditioned", "m": 100, "n": 10,
                 "decay_exponent": 0.0, "kappa_J": 3.0, "kappa_H": 10.0, "seed": 1},
    "solve": {"problem": {"generator": {"kind": "gaussian_rows", "m": 100, "n": 20, "seed": 1}},
              "config": {"algorithm": "sngd", "eta": 1.0, "lambda": 0.0,
                         "mu": 0.0, "k": 5, "T": 500, "seed": 0}},
    "spectra": {"problem": {"path": "problem.json"}, "lambda": 0.0,
                "sampler": {"kind": "uniform_without_replacement", "k": 2},
                "mode": {"kind": "exact_enumeration"},
                "m_spectrum_grid": [0.0, 0.1, 1.0]},
    "equivalence": {"m": 100, "n": 20, "k": 5, "lambda": 0.1, "T": 200, "seed": 0,
                    "gates": {"sngd_rk_le": 1e-10, "spring_ark_le": 1e-9}},
    "experiment": {"name": "fig_eigs", "m": 4, "n": 2, "k": 1, "trials": 1000,
                   "seed": 0, "gates": {"neg_xi_fraction_gt": 0.0}},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None


def _resolve_problem(entry, base_dir):
    """Problem entry: {'path': ...} loads a saved instance, {'generator': ...}
    builds one, anything else is an inline problem dict."""
    if not isinstance(entry, dict):
        raise UsageError("'problem' must be an object")
    if "path" in entry:
        return load_problem(Path(base_dir) / entry["path"])
    if "generator" in entry:
        return generate(GeneratorSpec.from_dict(entry["generator"]))
    return problem_from_dict(entry)


def _manifest(out_dir, command, config, extras):
    canon = json.dumps(config, sort_keys=True).encode()
    doc = {
        "command": command,
        "config_sha256": hashlib.sha256(canon).hexdigest(),
        "config": config,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "sngdlab": __version__,
        },
    }
    doc.update(extras)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


def _cmd_generate(cfg, out_dir, args):
    spec = GeneratorSpec.from_dict(cfg)
    if args.seed is not None:
        spec = GeneratorSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    problem = generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_problem(problem, out / "problem.json")
    _manifest(out_dir, "generate", cfg, {"resolved": spec.to_dict()})
    print(f"wrote {out / 'problem.json'} ({problem.kind}, m={problem.m}, n={problem.n})")
    return 0


def _cmd_solve(cfg, out_dir, args):
    problem = _resolve_problem(cfg["problem"], Path(args.config).parent)
    scfg = SolverConfig.from_dict(cfg["config"])
    if args.seed is not None:
        scfg = SolverConfig.from_dict({**scfg.to_dict(), "seed": args.seed})
    trace = run(problem, scfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    summary = {
        "algorithm": scfg.algorithm,
        "final_err_sq": trace.final_err_sq,
        "diverged": trace.diverged,
        "error": trace.error,
        "iterations_recorded": int(len(trace.t)),
        "config": scfg.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    _manifest(out_dir, "solve", cfg, {"resolved": scfg.to_dict()})
    print(f"wrote {out / 'trace.csv'} (final err_sq {trace.final_err_sq:.6g})")
    return 0


def _spectra_mode(cfg, args):
    mode = ExpectationMode.from_dict(cfg.get("mode", {"kind": "exact_enumeration"}))
    if args.mode == "exact":
        mode = exact_mode(mode.enumeration_budget)
    elif args.mode == "mc":
        mode = mc_mode(args.mc_samples or mode.mc_samples or 10000,
                       mode.enumeration_budget)
    return mode


def _cmd_spectra(cfg, out_dir, args):
    problem = _resolve_problem(cfg["problem"], Path(args.config).parent)
    lam = float(cfg.get("lambda", 0.0))
    sampler = SamplerSpec.from_dict(cfg["sampler"])
    mode = _spectra_mode(cfg, args)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    report = compute_report(problem, lam, sampler, mode, seed=seed)
    doc = report.to_dict()
    doc["invariant_flags"] = {
        "alpha_in_unit_interval": 0.0 < report.alpha <= 1.0 + 1e-12,
        "beta_within_bounds": 1.0 - 1e-8 <= report.beta <= 1.0 / report.alpha + 1e-8,
        "gamma_ge_inv_kappa_Qbar": report.gamma >= _inv_kappa(report.Qbar) - 1e-8,
        "kappas_ge_one": min(report.kappa_J, report.kappa_dem_J, report.Htilde_kappa) >= 1.0 - 1e-12,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spectral_report.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    files = ["spectral_report.json"]
    if problem.kind == "llq" and cfg.get("m_spectrum_grid"):
        grid = [float(x) for x in cfg["m_spectrum_grid"]]
        spectra = [m_spectrum(problem, g, sampler, mode, seed=seed).to_dict() for g in grid]
        lam0 = find_lambda0(problem, sampler, mode, grid, seed=seed)
        (out / "m_spectrum.json").write_text(json.dumps(
            {"grid": spectra, "lambda0": (lam0 if lam0 != float("inf") else "inf")},
            sort_keys=True, indent=1))
        files.append("m_spectrum.json")
    _manifest(out_dir, "spectra", cfg, {"seed": seed, "mode": mode.to_dict()})
    print(f"wrote {', '.join(files)} (alpha={report.alpha:.6g}, beta={report.beta:.6g}, "
          f"gamma={report.gamma:.6g})")
    return 0


def _inv_kappa(Q):
    w = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    return float(w[0] / w[-1])


def _cmd_experiment(cfg, out_dir, args, name_override=None):
    d = dict(cfg)
    if name_override is not None:
        d["name"] = name_override
    if args.seed is not None:
        d["seed"] = args.seed
    spec = ExperimentSpec.from_dict(d)
    result = run_experiment(spec, jobs=args.jobs)
    paths = result.write(out_dir)
    _manifest(out_dir, "experiment", cfg,
              {"resolved": spec.to_dict(), "outputs": sorted(Path(p).name for p in paths)})
    for name, ok in sorted(result.gates.items()):
        print(f"gate {name}: {'pass' if ok else 'FAIL'}")
    print(f"wrote {len(paths)} files to {out_dir}")
    if args.check and not result.gates_pass:
        return 2
    return 0


def build_parser():
    parser = _Parser(prog="sngdlab",
                     description="subsampled natural-gradient and Kaczmarz solver lab")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("generate", "solve", "spectra", "equivalence", "experiment"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for grid/trial maps")
        p.add_argument("--check", action="store_true", help="exit 2 if any gate fails")
        p.add_argument("--mode", choices=("exact", "mc"), default=None,
                       help="expectation mode override (spectra)")
        p.add_argument("--mc-samples", type=int, default=None, dest="mc_samples")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args.config)
        if args.subcommand == "generate":
            return _cmd_generate(cfg, args.out, args)
        if args.subcommand == "solve":
            return _cmd_solve(cfg, args.out, args)
        if args.subcommand == "spectra":
            return _cmd_spectra(cfg, args.out, args)
        if args.subcommand == "equivalence":
            return _cmd_experiment(cfg, args.out, args, name_override="equivalence_suite")
        return _cmd_experiment(cfg, args.out, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sub = getattr(locals().get("args", None), "subcommand", None)
        hint = SCHEMAS.get(sub) or SCHEMAS
        print(f"expected config shape: {json.dumps(hint)}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
