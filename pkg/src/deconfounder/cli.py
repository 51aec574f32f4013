"""Command-line interface: ``deconfounder <command> [--config FILE] [--key value ...]``.

Every command writes its outputs plus a ``<command>.config`` snapshot to
``--out``. File names depend only on the command and its flags.

Exit codes: 0 success or check passed, 1 check failed, 2 usage or input
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import factor as fm
from .check import CheckConfig, run_check
from .config import (Key, load_config, parse_bool, parse_floats, parse_optional_float, parse_words,
                     snapshot)
from .data import load_dataset, load_schema, save_dataset, split_holdout
from .errors import DeconfounderError, SpecError
from .experiments import (GwasSuiteConfig, MaskingSuiteConfig, SmokingSuiteConfig, gwas_suite,
                          masking_csv, masking_suite, smoking_suite, with_overrides)
from .metrics import make_table
from .outcome import OutcomeModelSpec, build_design, fit_outcome
from .pipeline import PipelineConfig, no_control, oracle, run, uncertainty
from .rng import RngStream
from .simulate import (GwasSimConfig, SimTruth, TwoCauseSimConfig, load_pfst, simulate_gwas,
                       simulate_two_cause)

EXIT_OK, EXIT_CHECK_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
SIM_KINDS = ("two-cause", "gwas-bn", "gwas-psd", "gwas-spatial")
SUITES = ("smoking", "gwas", "masking")
# execution settings that cannot change any artifact stay out of the snapshot
NOT_SNAPSHOTTED = ("threads", "out")


def parse_candidates(text: str) -> tuple:
    """Split a candidate list on ';', or on ',' between ``variant[:opts]`` items.

    ``linear,quadratic`` gives two specs; ``pf:k=10,shape=0.3`` gives one.
    """
    text = str(text).strip()
    if ";" in text:
        items = [s.strip() for s in text.split(";") if s.strip()]
    else:
        items = []
        for tok in (s.strip() for s in text.split(",") if s.strip()):
            if items and "=" in tok and ":" not in tok:
                items[-1] += "," + tok
            else:
                items.append(tok)
    if not items:
        raise SpecError("no candidate factor models given")
    return tuple(fm.parse_factor_spec(s) for s in items)


_CONTRAST = re.compile(r"^\s*a\s*=\s*(?P<a>.+?)\s*,\s*aprime\s*=\s*(?P<ap>.+?)\s*$")


def format_contrast(value) -> str:
    a, ap = value
    return "a=" + ",".join(map(repr, a)) + ",aprime=" + ",".join(map(repr, ap))


def format_candidates(specs) -> str:
    return "; ".join(s.to_text() for s in specs)


def parse_contrast(text: str):
    """``a=1,0,aprime=0,0`` -> two float vectors."""
    match = _CONTRAST.match(str(text))
    if not match:
        raise SpecError(f"contrast must look like a=...,aprime=...; got {text!r}")
    return parse_floats(match["a"]), parse_floats(match["ap"])


COMMON = [
    Key("seed", int, 0, "master seed"),
    Key("out", str, "out", "output directory"),
    Key("threads", int, 1, "worker cap; results do not depend on it"),
]
DATA = [
    Key("data", str, "", "dataset CSV"),
    Key("schema", str, "", "schema file (column = role); default: outcome y, all else causes"),
]
CHECK = [
    Key("holdout", float, 0.2, "held-out fraction of cause entries"),
    Key("replicates", int, 100, "replicated datasets per individual"),
    Key("z_samples", int, 100, "posterior draws of z per individual"),
    Key("threshold", float, 0.1, "pass when the aggregate score exceeds this"),
    Key("aggregation", str, "mean", "mean or pooled"),
]
OUTCOME = [
    Key("conditioning", str, "z", "z, reconstructed or none"),
    Key("family", str, "gaussian", "gaussian or logistic"),
    Key("penalty", parse_optional_float, None, "L2 penalty; none means 0.1 * n"),
    Key("covariates", parse_bool, True, "include observed covariates"),
]

KEYS = {
    "simulate": COMMON + [
        Key("kind", str, "two-cause", "/".join(SIM_KINDS)),
        Key("n", int, 0, "individuals (0: simulator default)"),
        Key("m", int, 500, "causes for GWAS kinds"),
        Key("reps", int, 1, "replicated datasets"),
        Key("link", str, "quadratic", "two-cause link: linear or quadratic"),
        Key("link_slope", float, 1.0, "two-cause link slope (0 removes confounding)"),
        Key("link_quadratic", float, 0.7, "two-cause quadratic coefficient"),
        Key("dependent_cause", parse_bool, False, "add a third cause driven by the first"),
        Key("alpha", float, 0.5, "PSD Dirichlet concentration"),
        Key("tau", float, 0.5, "spatial temperature"),
        Key("snr", str, "low", "low or high"),
        Key("family", str, "real", "GWAS trait family: real or binary"),
        Key("pfst", str, "", "optional p,fst CSV for the BN generator"),
    ],
    "fit": COMMON + DATA + [
        Key("model", fm.parse_factor_spec, fm.parse_factor_spec("ppca:k=1"), "factor model, e.g. pf:k=10"),
        Key("holdout", float, 0.0, "fit with this fraction of entries held out (0: all data)"),
    ],
    "check": COMMON + DATA + [
        Key("model", fm.parse_factor_spec, fm.parse_factor_spec("ppca:k=1"), "factor model"),
    ] + CHECK + [Key("replicates_csv", parse_bool, False, "also write per-replicate statistics")],
    "deconfound": COMMON + DATA + [
        Key("candidates", parse_candidates, parse_candidates("ppca:k=1"), "candidate factor models",
            fmt=format_candidates),
        Key("truth", str, "", "truth JSON; adds an evaluation table"),
        Key("samples", int, 0, "posterior draws of z for uncertainty (0 skips)"),
        Key("sample_scale", float, 1.0, "shrink draws toward the posterior mean"),
        Key("outcome_check", parse_bool, True, "run the outcome-model check"),
        Key("contrast", parse_contrast, (), "a=...,aprime=... (repeatable)", multiple=True,
            fmt=format_contrast),
    ] + CHECK + OUTCOME,
    "evaluate": COMMON + [
        Key("estimates", parse_words, (), "estimate JSON files, comma separated"),
        Key("labels", parse_words, (), "row labels (default: from each estimate)"),
        Key("truth", str, "", "truth JSON"),
        Key("subset", str, "all", "all or causal (nonzero true coefficients)"),
    ],
    "experiment": COMMON + [
        Key("suite", str, "smoking", "/".join(SUITES)),
        Key("seeds", int, 0, "seeds (0: suite default)"),
        Key("n", int, 0, "individuals (0: suite default)"),
        Key("m", int, 0, "causes for GWAS suites (0: default)"),
        Key("k", int, 0, "PF latent dimension (0: default)"),
        Key("samples", int, 0, "smoking: posterior draws per estimate (0: default)"),
        Key("penalty", parse_optional_float, None, "outcome L2 penalty"),
        Key("conditioning", str, "", "z or reconstructed (empty: suite default)"),
        Key("percents", parse_floats, (0.0, 25.0, 50.0, 75.0), "masking percents"),
        Key("generators", parse_words, (), "gwas generators, e.g. bn,psd:0.1,spatial:0.5"),
        Key("snr", str, "low", "GWAS SNR profile"),
        Key("check", parse_bool, True, "gwas: run the assignment check"),
    ],
}

HELP = {
    "simulate": "simulate datasets with known effects",
    "fit": "fit a factor model to the causes",
    "check": "predictive check of a factor model",
    "deconfound": "run the deconfounder and estimate effects",
    "evaluate": "score estimates against a truth file",
    "experiment": "run a multi-seed experiment suite",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deconfounder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in KEYS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", default=None, help="key = value config file")
        for k in keys:
            flag = "--" + k.name.replace("_", "-")
            if k.multiple:
                p.add_argument(flag, dest=k.name, action="append", default=None, help=k.help)
            else:
                p.add_argument(flag, dest=k.name, default=None, help=k.help)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _dataset(cfg):
    if not cfg["data"]:
        raise SpecError("--data is required")
    schema = load_schema(cfg["schema"]) if cfg["schema"] else None
    return load_dataset(cfg["data"], schema)


def _check_config(cfg) -> CheckConfig:
    return CheckConfig(holdout=cfg["holdout"], replicates=cfg["replicates"], z_samples=cfg["z_samples"],
                       threshold=cfg["threshold"], aggregation=cfg["aggregation"], seed=cfg["seed"])


def _outcome_spec(cfg) -> OutcomeModelSpec:
    return OutcomeModelSpec(conditioning=cfg["conditioning"], include_covariates=cfg["covariates"],
                            family=cfg["family"], penalty=cfg["penalty"])


def _signed_beta(truth: SimTruth, names) -> np.ndarray:
    lookup = dict(zip(truth.cause_names, truth.beta * truth.effect_sign))
    missing = [n for n in names if n not in lookup]
    if missing:
        raise SpecError(f"truth file lacks causes: {', '.join(missing[:5])}")
    return np.array([lookup[n] for n in names])


def _table_files(out: Path, stem: str, table) -> None:
    _write(out / f"{stem}.csv", table.to_csv())
    _write(out / f"{stem}.txt", table.to_text())
    _write(out / f"{stem}.json", table.to_json() + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg) -> int:
    kind = cfg["kind"]
    if kind not in SIM_KINDS:
        raise SpecError(f"unknown simulation kind {kind!r}; choose from {', '.join(SIM_KINDS)}")
    if cfg["reps"] < 1:
        raise SpecError("reps must be >= 1")
    out = _outdir(cfg)
    pfst = load_pfst(cfg["pfst"]) if cfg["pfst"] else None
    root = RngStream(cfg["seed"]).child("simulate", kind)
    for r in range(cfg["reps"]):
        stream = root.child("rep", r)
        if kind == "two-cause":
            sim = TwoCauseSimConfig(n=cfg["n"] or 9708, link=cfg["link"], link_slope=cfg["link_slope"],
                                    link_quadratic=cfg["link_quadratic"],
                                    dependent_cause=cfg["dependent_cause"], seed=cfg["seed"])
            d, truth = simulate_two_cause(sim, stream)
        else:
            sim = GwasSimConfig(generator=kind.split("-", 1)[1], n=cfg["n"] or 1000, m=cfg["m"],
                                alpha=cfg["alpha"], tau=cfg["tau"], snr=cfg["snr"], family=cfg["family"],
                                seed=cfg["seed"])
            d, truth = simulate_gwas(sim, stream, pfst=pfst)
        stem = f"{kind}-rep{r:03d}"
        save_dataset(d, out / f"{stem}.csv")
        truth.params["rep"] = r
        _write(out / f"{stem}.truth.json", truth.to_json() + "\n")
    return EXIT_OK


def cmd_fit(cfg) -> int:
    d = _dataset(cfg)
    out = _outdir(cfg)
    stream = RngStream(cfg["seed"]).child("fit")
    mask = None
    if cfg["holdout"] > 0:
        mask = split_holdout(d.causes, cfg["holdout"], stream.child("holdout")).observed
    fit = fm.fit(cfg["model"], d, mask, rng=stream.child("model"))
    fm.save_fit(fit, out / "fit.json")
    z = fit.posterior_means()
    with open(out / "z.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"z{k}" for k in range(z.shape[1])])
        for row in z:
            w.writerow([repr(float(v)) for v in row])
    return EXIT_OK


def cmd_check(cfg) -> int:
    d = _dataset(cfg)
    out = _outdir(cfg)
    report = run_check(cfg["model"], d, _check_config(cfg), RngStream(cfg["seed"]).child("check"),
                       threads=cfg["threads"])
    _write(out / "check.json", report.to_json() + "\n")
    report.write_csv(out / "check_scores.csv",
                     out / "check_replicates.csv" if cfg["replicates_csv"] else None)
    print(f"{report.label}: score {report.score:.4f} ({'pass' if report.passed else 'fail'})")
    return EXIT_OK if report.passed else EXIT_CHECK_FAIL


def _candidate_rows(d, truth, candidates, pcfg, stream, ospec):
    """One evaluation row per candidate, checked and fit as the pipeline would."""
    runs = []
    for idx, spec in enumerate(candidates):
        report = run_check(spec, d, pcfg.check, stream.child("check", idx), threads=pcfg.threads)
        fit = fm.fit(spec, d, None, rng=stream.child("refit", idx))
        if pcfg.samples >= 2:
            samples = uncertainty(d, fit, ospec, pcfg.samples, stream.child("uncertainty", idx),
                                  scale=pcfg.sample_scale, threads=pcfg.threads).samples
        else:
            samples = fit_outcome(build_design(d, fit, ospec, z=fit.posterior_means()), d.outcome, ospec).beta
        runs.append({"label": f"{spec.label()} {ospec.conditioning}", "samples": samples,
                     "check": report.passed})
    return runs


def cmd_deconfound(cfg) -> int:
    d = _dataset(cfg)
    out = _outdir(cfg)
    ospec = _outcome_spec(cfg)
    pcfg = PipelineConfig(check=_check_config(cfg), outcome=ospec, samples=cfg["samples"],
                          sample_scale=cfg["sample_scale"], outcome_check=cfg["outcome_check"],
                          threads=cfg["threads"], seed=cfg["seed"])
    contrasts = None
    if cfg["contrast"]:
        contrasts = []
        for k, (a, ap) in enumerate(cfg["contrast"]):
            if len(a) != d.m or len(ap) != d.m:
                raise SpecError(f"contrast {k} needs {d.m} values for a and aprime")
            contrasts.append((f"contrast{k}", np.array(a), np.array(ap)))
    stream = RngStream(cfg["seed"]).child("deconfound")
    est = run(d, cfg["candidates"], pcfg, stream, contrasts)
    _write(out / "estimate.json", est.to_json() + "\n")
    for name, value in est.effects.items():
        if name.startswith("contrast"):
            print(f"{name}: {value:.6g}")
    if cfg["truth"]:
        truth = SimTruth.load(cfg["truth"])
        beta = _signed_beta(truth, d.cause_names)
        runs = [{"label": "No control", "samples": no_control(d, ospec).beta}]
        if truth.confounder.size == d.n:
            runs.append({"label": "Oracle (confounder)",
                         "samples": oracle(d, truth.confounder, ospec).beta})
        runs += _candidate_rows(d, truth, cfg["candidates"], pcfg, stream, ospec)
        table = make_table(runs, beta, metadata={"data": Path(cfg["data"]).name, "seed": cfg["seed"]})
        _table_files(out, "table", table)
        sys.stdout.write(table.to_text())
    print(f"accepted {est.spec.label()} (check {'passed' if est.passed else 'failed'})")
    return EXIT_OK if est.passed else EXIT_CHECK_FAIL


def cmd_evaluate(cfg) -> int:
    if not cfg["estimates"] or not cfg["truth"]:
        raise SpecError("--estimates and --truth are required")
    if cfg["labels"] and len(cfg["labels"]) != len(cfg["estimates"]):
        raise SpecError("give one label per estimate")
    if cfg["subset"] not in ("all", "causal"):
        raise SpecError("subset must be all or causal")
    out = _outdir(cfg)
    truth = SimTruth.load(cfg["truth"])
    runs, beta = [], None
    for k, path in enumerate(cfg["estimates"]):
        with open(path, encoding="utf-8") as fh:
            est = json.load(fh)
        lo, hi = est["outcome"]["blocks"]["causes"]
        names = est["outcome"]["names"][lo:hi]
        b = _signed_beta(truth, names)
        if beta is not None and not np.array_equal(b, beta):
            raise SpecError("estimates cover different causes")
        beta = b
        unc = est.get("uncertainty")
        samples = unc["samples"] if unc else [est["outcome"]["coefficients"][n] for n in names]
        label = cfg["labels"][k] if cfg["labels"] else \
            f"{est['accepted']['variant']}(k={est['accepted']['k']}) {est['conditioning']}"
        runs.append({"label": label, "samples": samples, "check": est.get("passed")})
    subset = None if cfg["subset"] == "all" else np.flatnonzero(beta != 0)
    table = make_table(runs, beta, subset=subset, metadata={"subset": cfg["subset"]})
    _table_files(out, "evaluation", table)
    sys.stdout.write(table.to_text())
    return EXIT_OK


def cmd_experiment(cfg) -> int:
    suite = cfg["suite"]
    if suite not in SUITES:
        raise SpecError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    out = _outdir(cfg)
    common = {"seeds": cfg["seeds"] or None, "n": cfg["n"] or None, "seed": cfg["seed"]}
    if suite == "smoking":
        scfg = with_overrides(SmokingSuiteConfig(), **common, samples=cfg["samples"] or None,
                         penalty=cfg["penalty"])
        tables, avg = smoking_suite(scfg, threads=cfg["threads"])
        _table_files(out, "smoking_table", avg)
        _write(out / "smoking_seeds.csv", _seed_rows(tables))
        sys.stdout.write(avg.to_text())
        return EXIT_OK
    gw = {"m": cfg["m"] or None, "k": cfg["k"] or None, "snr": cfg["snr"], "penalty": cfg["penalty"],
          "conditioning": cfg["conditioning"] or None}
    if suite == "gwas":
        gcfg = with_overrides(GwasSuiteConfig(), **common, **gw, check=cfg["check"],
                         generators=cfg["generators"] or None)
        results = gwas_suite(gcfg, threads=cfg["threads"])
        for gen, (tables, avg) in results.items():
            stem = "gwas_" + gen.replace(":", "_")
            _table_files(out, stem + "_table", avg)
            _write(out / f"{stem}_seeds.csv", _seed_rows(tables))
            print(f"== {gen}")
            sys.stdout.write(avg.to_text())
        return EXIT_OK
    mcfg = with_overrides(MaskingSuiteConfig(), **common, **gw, percents=cfg["percents"],
                     generator=(cfg["generators"] or ("bn",))[0])
    per_seed, rho, means = masking_suite(mcfg, threads=cfg["threads"])
    _write(out / "masking_ratio.csv", masking_csv(per_seed, means))
    _write(out / "masking_runs.csv", masking_csv(per_seed))
    _write(out / "masking_summary.json", _json({"spearman": rho, "mean_ratio": {f"{p:g}": r for p, r in means.items()},
                                                 "seeds": mcfg.seeds}))
    print(f"Spearman(ratio, percent) = {rho:.4f}")
    return EXIT_OK


def _seed_rows(tables) -> str:
    lines = ["seed,method,check,bias2,variance,mse,rmse"]
    for s, t in enumerate(tables):
        for r in t.rows:
            check = "" if r.check is None else ("pass" if r.check else "fail")
            lines.append(",".join([str(s), r.label, check, repr(r.bias2), repr(r.variance), repr(r.mse),
                                   repr(r.rmse)]))
    return "\n".join(lines) + "\n"


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "check": cmd_check,
    "deconfound": cmd_deconfound,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    keys = KEYS[args.command]
    overrides = {k.name: getattr(args, k.name) for k in keys}
    try:
        cfg = load_config(args.config, keys, overrides)
        if cfg["threads"] < 1:
            raise SpecError("threads must be >= 1")
        out = _outdir(cfg)
        _write(out / f"{args.command}.config", snapshot(keys, cfg, exclude=NOT_SNAPSHOTTED))
        return COMMANDS[args.command](cfg)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"deconfounder: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DeconfounderError, ValueError, OSError) as exc:
        print(f"deconfounder: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
