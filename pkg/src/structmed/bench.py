"""End-to-end benchmark of the two outcome models over replicated datasets."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .effects import nie_chain
from .errors import ArgumentError, MergeError, StructMedError
from .grid_kernel import from_coeffs
from .mediator import MediatorOptions, fit_mediator, posterior_mean_eta
from .outcome import OutcomeOptions, fit_basmu, fit_bima
from .simulate import CaseConfig, case_config, simulate

__all__ = [
    "BenchOptions",
    "BenchReport",
    "run_replication",
    "run_case",
    "summarize",
    "write_report",
    "read_report",
    "mse_decomposition",
]

METHODS = ("bima", "basmu")
METRICS = ("bias", "variance", "mse")

# budgets per scale: (mediator iterations, outcome iterations)
_ITERS = {"desk": (500, 4000), "full": (1000, 20000)}


@dataclass
class BenchOptions:
    med_iter: int = 500
    out_iter: int = 4000
    keep_fraction: float = 0.1
    p_delta: float = 0.5

    @classmethod
    def for_scale(cls, scale: str) -> "BenchOptions":
        if scale not in _ITERS:
            raise ArgumentError(f"unknown scale {scale!r}")
        m, o = _ITERS[scale]
        return cls(med_iter=m, out_iter=o)

    def to_dict(self) -> dict:
        return {"med_iter": self.med_iter, "out_iter": self.out_iter, "keep_fraction": self.keep_fraction,
                "p_delta": self.p_delta}


def _sampler_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stage])


def run_replication(cfg: CaseConfig, opts: BenchOptions) -> dict:
    """Simulate one dataset and fit both outcome models.

    Returns point estimates (posterior means) of the scalar NIE, the NDE and
    the beta field for each method, or the failing stage and message.
    """
    stage = "simulate"
    timings = {}
    try:
        t0 = time.perf_counter()
        data, truth, basis = simulate(cfg)
        timings["simulate"] = time.perf_counter() - t0
        stage = "mediator"
        t0 = time.perf_counter()
        med = fit_mediator(data, basis, MediatorOptions(n_iter=opts.med_iter, keep_fraction=opts.keep_fraction),
                           _sampler_rng(cfg.seed, 1))
        etahat = posterior_mean_eta(med, basis)
        timings["mediator"] = time.perf_counter() - t0
        est = {}
        for k, method in enumerate(METHODS):
            stage = method
            t0 = time.perf_counter()
            oo = OutcomeOptions(n_iter=opts.out_iter, keep_fraction=opts.keep_fraction, p_delta=opts.p_delta)
            rng = _sampler_rng(cfg.seed, 2 + k)
            out = fit_bima(data, basis, oo, rng) if method == "bima" else fit_basmu(data, basis, etahat, oo, rng)
            draws = nie_chain(med, out, basis)
            est[method] = {
                "nie": float(draws.scalar.mean()),
                "nde": float(out.gamma.mean()),
                "beta": from_coeffs(out.theta_beta.mean(axis=0), basis),
            }
            timings[method] = time.perf_counter() - t0
    except (StructMedError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return {"seed": cfg.seed, "ok": False, "stage": stage, "error": f"{type(exc).__name__}: {exc}",
                "timings": timings}
    return {"seed": cfg.seed, "ok": True, "estimates": est, "truth_nie": truth.nie, "truth_nde": truth.gamma,
            "truth_beta": truth.beta, "timings": timings}


def _run_one(args):
    cfg, opts = args
    return run_replication(cfg, opts)


def mse_decomposition(estimates, truth: float) -> dict:
    """Bias, population variance (ddof 0) and MSE of point estimates; MSE = bias^2 + variance."""
    e = np.asarray(estimates, float)
    if e.size == 0:
        return {"bias": float("nan"), "variance": float("nan"), "mse": float("nan")}
    bias = float(e.mean() - truth)
    var = float(np.mean((e - e.mean()) ** 2))
    return {"bias": bias, "variance": var, "mse": bias * bias + var}


@dataclass
class BenchReport:
    config: dict
    options: dict
    scale: str
    reps: int
    seeds: list
    n_complete: int
    failures: list
    methods: dict
    estimates: dict
    timings: list = field(default_factory=list)

    @property
    def case(self) -> int:
        return int(self.config["case"])

    def metric(self, method: str, quantity: str, name: str) -> float:
        return float(self.methods[method][quantity][name])

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock timings are kept separately."""
        return {
            "config": self.config,
            "options": self.options,
            "scale": self.scale,
            "reps": self.reps,
            "seeds": self.seeds,
            "n_complete": self.n_complete,
            "failures": self.failures,
            "methods": self.methods,
            "estimates": self.estimates,
        }

    @classmethod
    def from_dict(cls, d: dict, timings=None) -> "BenchReport":
        return cls(d["config"], d["options"], d["scale"], d["reps"], d["seeds"], d["n_complete"], d["failures"],
                   d["methods"], d["estimates"], timings or [])


def run_case(cfg: CaseConfig | int, reps: int = 20, scale: str = "desk", jobs: int = 1, seed0: int = 0,
             opts: BenchOptions | None = None) -> BenchReport:
    """Replicate simulate -> mediator -> etahat -> both outcome fits -> effects.

    Replication ``r`` uses simulation seed ``seed0 + r``. Failed replications
    are listed and excluded from the aggregates. Results are folded in seed
    order, so the report does not depend on ``jobs``.
    """
    if reps < 1:
        raise ArgumentError("reps must be positive")
    if isinstance(cfg, (int, np.integer)):
        cfg = case_config(int(cfg), scale)
    opts = opts or BenchOptions.for_scale(scale)
    seeds = [int(seed0) + r for r in range(reps)]
    tasks = [(cfg.replace(seed=s), opts) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    results.sort(key=lambda r: r["seed"])

    ok = [r for r in results if r["ok"]]
    failures = [{"seed": r["seed"], "stage": r["stage"], "error": r["error"]} for r in results if not r["ok"]]
    methods = {}
    estimates = {m: {"nie": [], "nde": []} for m in METHODS}
    if ok:
        truth_nie = ok[0]["truth_nie"]
        truth_nde = ok[0]["truth_nde"]
        beta0 = ok[0]["truth_beta"]
        for m in METHODS:
            nie = [r["estimates"][m]["nie"] for r in ok]
            nde = [r["estimates"][m]["nde"] for r in ok]
            betas = np.array([r["estimates"][m]["beta"] for r in ok])
            estimates[m] = {"nie": nie, "nde": nde}
            methods[m] = {
                "nie": mse_decomposition(nie, truth_nie),
                "nde": mse_decomposition(nde, truth_nde),
                "beta_bias": (betas.mean(axis=0) - beta0).tolist(),
                "beta_mse": np.mean((betas - beta0) ** 2, axis=0).tolist(),
            }
        estimates["truth"] = {"nie": truth_nie, "nde": truth_nde}
    else:
        for m in METHODS:
            nan = mse_decomposition([], 0.0)
            methods[m] = {"nie": nan, "nde": dict(nan), "beta_bias": [], "beta_mse": []}
    return BenchReport(
        config=cfg.to_dict(),
        options=opts.to_dict(),
        scale=scale,
        reps=reps,
        seeds=seeds,
        n_complete=len(ok),
        failures=failures,
        methods=methods,
        estimates=estimates,
        timings=[{"seed": r["seed"], **r["timings"]} for r in results],
    )


def write_report(report: BenchReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    path.with_name(path.stem + ".timings.json").write_text(json.dumps(report.timings, indent=2))
    return path


def read_report(path) -> BenchReport:
    path = Path(path)
    timings_path = path.with_name(path.stem + ".timings.json")
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else []
    return BenchReport.from_dict(json.loads(path.read_text()), timings)


def _config_key(report: BenchReport) -> str:
    cfg = dict(report.config)
    cfg.pop("seed", None)
    return json.dumps({"config": cfg, "options": report.options, "scale": report.scale}, sort_keys=True)


def summarize(reports, quantity: str = "nie") -> tuple[pd.DataFrame, str]:
    """Long table (case, method, metric, value) and a plain-text side-by-side layout.

    Reports for the same case must share their configuration.
    """
    reports = list(reports)
    if not reports:
        raise ArgumentError("need at least one report")
    if quantity not in ("nie", "nde"):
        raise ArgumentError(f"quantity must be 'nie' or 'nde', got {quantity!r}")
    by_case: dict[int, BenchReport] = {}
    for rep in reports:
        prev = by_case.get(rep.case)
        if prev is not None and _config_key(prev) != _config_key(rep):
            raise MergeError(f"conflicting configurations for case {rep.case}")
        by_case.setdefault(rep.case, rep)
    rows = []
    for case in sorted(by_case):
        rep = by_case[case]
        for m in METHODS:
            for metric in METRICS:
                rows.append({"case": case, "method": m, "metric": metric, "value": rep.metric(m, quantity, metric)})
    df = pd.DataFrame(rows, columns=["case", "method", "metric", "value"])

    lines = [f"{'':8s}{'BIMA':>14s}{'BASMU':>14s}"]
    for case in sorted(by_case):
        rep = by_case[case]
        cfg = rep.config
        lines.append(f"Case {case}  ({cfg['nu_pattern']} nu, n={cfg['n']}, sigma_eta={cfg['sigma_eta']}, "
                     f"sigma_M={cfg['sigma_M']}, reps={rep.n_complete}/{rep.reps})")
        best = min(METHODS, key=lambda m: rep.metric(m, quantity, "mse"))
        for metric in METRICS:
            cells = []
            for m in METHODS:
                v = rep.metric(m, quantity, metric)
                mark = "*" if metric == "mse" and m == best else " "
                cells.append(f"{v:13.4g}{mark}")
            lines.append(f"{metric.capitalize():8s}" + "".join(cells))
    return df, "\n".join(lines) + "\n"
