"""Command-line entry point.

Exit status: 0 on success, 2 for invalid arguments or inputs, 3 for
numerical or sampler failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchOptions, read_report, run_case, summarize, write_report
from .bias import (bias_limit_bima, empirical_bias_by_n, empirical_H_h, freq_bias_limit, shrinkage_factor)
from .effects import summarize_effects, write_effects
from .errors import (ArgumentError, FitError, KernelError, MergeError, NumericalError, StructMedError)
from .grid_kernel import KernelBasis
from .mediator import (MediatorOptions, fit_mediator, posterior_mean_eta, read_etahat, read_mediator_chains,
                       write_etahat, write_mediator_chains)
from .outcome import OutcomeOptions, fit_outcome, read_outcome_chains, write_outcome_chains
from .simulate import CaseConfig, basis_for, case_config, draw_covariates, make_truth, read_dataset, read_truth, simulate, write_dataset

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_NUMERIC = 3


def _load_overrides(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ArgumentError("config file must hold a JSON object")
    names = set(CaseConfig.__dataclass_fields__)
    unknown = set(doc) - names
    if unknown:
        raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _patch_meta(out_dir: Path, **extra) -> None:
    meta_path = out_dir / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta.update(extra)
    meta_path.write_text(json.dumps(meta, indent=2))


def cmd_simulate(args) -> int:
    overrides = _load_overrides(args.config)
    cfg = case_config(args.case, args.scale, args.seed, **overrides)
    data, truth, basis = simulate(cfg)
    out = write_dataset(args.out, data, truth, cfg)
    basis.save(out / "basis.kbas")
    print(f"wrote n={cfg.n} p={cfg.p} case {cfg.case} dataset to {out}")
    return EXIT_OK


def cmd_fit_mediator(args) -> int:
    data = read_dataset(args.data)
    basis_path = Path(args.basis) if args.basis else Path(args.data) / "basis.kbas"
    basis = KernelBasis.load(basis_path)
    opts = MediatorOptions(n_iter=args.iters, keep_fraction=args.keep_fraction, alpha_update=args.alpha_update)
    chains = fit_mediator(data, basis, opts, args.seed)
    out = write_mediator_chains(chains, args.out)
    write_etahat(posterior_mean_eta(chains, basis), out / "etahat.csv")
    _patch_meta(out, basis_path=str(basis_path.resolve()))
    print(f"mediator: {chains.n_draws} draws retained, alpha acceptance {chains.acceptance:.3f}; wrote {out}")
    return EXIT_OK


def cmd_fit_outcome(args) -> int:
    data = read_dataset(args.data)
    basis_path = Path(args.basis) if args.basis else Path(args.data) / "basis.kbas"
    basis = KernelBasis.load(basis_path)
    etahat = None
    if args.model == "basmu":
        if args.etahat is None:
            raise ArgumentError("--etahat is required for --model basmu")
        etahat = read_etahat(args.etahat)
    opts = OutcomeOptions(n_iter=args.iters, keep_fraction=args.keep_fraction, p_delta=args.p_delta,
                          beta_update=args.beta_update, nu_design=args.nu_design)
    chains = fit_outcome(args.model, data, basis, etahat, opts, args.seed)
    out = write_outcome_chains(chains, args.out)
    _patch_meta(out, basis_path=str(basis_path.resolve()))
    print(f"{args.model}: {chains.n_draws} draws retained; wrote {out}")
    return EXIT_OK


def cmd_effects(args) -> int:
    med = read_mediator_chains(args.med)
    outcome_dir = Path(args.outcome) if args.outcome else Path(args.out)
    out = read_outcome_chains(outcome_dir)
    if args.basis:
        basis_path = Path(args.basis)
    else:
        meta = json.loads((outcome_dir / "meta.json").read_text())
        if "basis_path" not in meta:
            raise ArgumentError("no --basis given and the outcome chains do not record one")
        basis_path = Path(meta["basis_path"])
    basis = KernelBasis.load(basis_path)
    summary = summarize_effects(med, out, basis, args.level, args.pairing)
    dest = write_effects(summary, args.out)
    print(f"NIE {summary.nie_mean:.5g} [{summary.nie_lo:.5g}, {summary.nie_hi:.5g}]  "
          f"NDE {summary.nde_mean:.5g} [{summary.nde_lo:.5g}, {summary.nde_hi:.5g}]  "
          f"active voxels {summary.selection['n_active']}; wrote {dest}")
    return EXIT_OK


def cmd_bias_limit(args) -> int:
    truth_path = Path(args.truth)
    truth, cfg = read_truth(truth_path)
    if cfg is None:
        raise ArgumentError(f"{truth_path} does not record its configuration")
    basis = KernelBasis.load(args.basis) if args.basis else basis_for(cfg)
    if basis.p != truth.p:
        raise ArgumentError(f"basis has p={basis.p}, truth has p={truth.p}")
    data_dir = truth_path.parent
    if (data_dir / "X.csv").exists() and (data_dir / "C.csv").exists():
        data = read_dataset(data_dir)
        X, C = data.X, data.C
    else:
        # replay the simulation draw order to recover the covariates
        rng = np.random.default_rng(cfg.seed)
        make_truth(cfg, basis, rng)
        X, C = draw_covariates(cfg.n, cfg.q, rng)
    inputs = empirical_H_h(truth, X, C, basis, partial_out=True)
    ns = args.ns or [cfg.n, 4 * cfg.n]
    report = {
        "limit_vector": bias_limit_bima(inputs).tolist(),
        "empirical_bias_by_n": {str(k): v for k, v in
                                empirical_bias_by_n(cfg, basis, ns, args.reps, seed=args.seed).items()},
        "freq_limit_scalar": freq_bias_limit(inputs.theta_alpha, inputs.theta_nu, inputs.theta_L, inputs.sigma2_M),
        "shrinkage_factor": shrinkage_factor(truth.sigma_eta, truth.sigma_M),
        "coefficient_noise_variance": inputs.sigma2_M,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2))
    print(f"limit norm {np.linalg.norm(report['limit_vector']):.4g}, frequentist NIE bias "
          f"{report['freq_limit_scalar']:.4g}; wrote {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = _load_overrides(args.config)
    cfg = case_config(args.case, args.scale, 0, **overrides)
    opts = BenchOptions.for_scale(args.scale)
    if args.med_iters:
        opts.med_iter = args.med_iters
    if args.out_iters:
        opts.out_iter = args.out_iters
    report = run_case(cfg, args.reps, args.scale, args.jobs, args.seed0, opts)
    write_report(report, args.out)
    _, text = summarize([report])
    print(text, end="")
    if report.failures:
        print(f"{len(report.failures)} of {report.reps} replications failed", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    reports = [read_report(p) for p in args.reports]
    df, text = summarize(reports, args.quantity)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(args.out, index=False, float_format="%.17g")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="structmed", description="Structured mediation analysis with latent confounders.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one dataset of a benchmark case")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", choices=["desk", "full"], default="desk")
    p.add_argument("--config", help="JSON file of configuration overrides")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-mediator", help="sample the mediator model and write etahat")
    p.add_argument("--data", required=True)
    p.add_argument("--basis", help="basis file (default: DATA/basis.kbas)")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--keep-fraction", type=float, default=0.1)
    p.add_argument("--alpha-update", choices=["mala", "gibbs"], default="mala")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_mediator)

    p = sub.add_parser("fit-outcome", help="sample an outcome model")
    p.add_argument("--model", choices=["bima", "basmu"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--etahat", help="etahat.csv from fit-mediator (basmu only)")
    p.add_argument("--basis", help="basis file (default: DATA/basis.kbas)")
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--keep-fraction", type=float, default=0.1)
    p.add_argument("--p-delta", type=float, default=0.5)
    p.add_argument("--beta-update", choices=["gibbs", "mala"], default="gibbs")
    p.add_argument("--nu-design", choices=["sqrt", "measure", "raw"], default="sqrt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_outcome)

    p = sub.add_parser("effects", help="summarize NIE/NDE from mediator and outcome chains")
    p.add_argument("--med", required=True, help="mediator chains directory")
    p.add_argument("--outcome", help="outcome chains directory (default: --out)")
    p.add_argument("--out", required=True, help="directory for effects.json and effects.csv")
    p.add_argument("--basis", help="basis file (default: the one recorded by fit-outcome)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--pairing", choices=["cyclic", "mean_alpha"], default="cyclic")
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("bias-limit", help="evaluate asymptotic bias limits for a simulated truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--basis")
    p.add_argument("--ns", type=int, nargs="+", help="sample sizes for the Monte Carlo bias (default: n and 4n)")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bias_report.json")
    p.set_defaults(func=cmd_bias_limit)

    p = sub.add_parser("bench", help="replicated benchmark of both outcome models for one case")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--scale", choices=["desk", "full"], default="desk")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--config", help="JSON file of configuration overrides")
    p.add_argument("--med-iters", type=int)
    p.add_argument("--out-iters", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("summarize", help="combine bench reports into one table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--quantity", choices=["nie", "nde"], default="nie")
    p.add_argument("--out", help="CSV destination")
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, MergeError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (NumericalError, KernelError, FitError, np.linalg.LinAlgError, StructMedError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
