"""Command-line interface: ``diffse <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error (including
partially failed runs), 4 numeric/domain error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict, worker_count
from .errors import ConfigError, DataError, DimensionError, DomainError
from .metrics import aggregate, evaluate_batch, write_rows
from .pipeline import _json_safe, enhance_dataset, fit_from_index
from .schedule import eval_point, lambda_clamp_time, sigma_max
from .simulate import (
    build_folds,
    index_manifests,
    load_index,
    read_manifest,
    render_dataset,
    select_fold,
    synth_ensemble,
)

log = logging.getLogger("diffse")

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

SWEEP_COLUMNS = ("sampler", "n_steps", "condition", "n_mixtures", "n_ok", "n_evals",
                 "delta_snr", "delta_si_sdr", "delta_estoi", "delta_pesq", "flag")


# -- configuration ---------------------------------------------------------------------

def _set(raw: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = raw
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def resolve_config(args, overrides: dict[str, str]) -> ExperimentConfig:
    """Config file (if any) with non-``None`` CLI flags layered on top."""
    raw: dict = {}
    base = Path.cwd()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        base = path.parent
    for attr, dotted in overrides.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set(raw, dotted, value)
    return config_from_dict(raw, base)


COMMON = {"seed": "seed"}
SAMPLER_FLAGS = {"sampler": "sampler.kind", "steps": "sampler.n_steps", "s_churn": "sampler.s_churn",
                 "r": "sampler.r", "n_corrector": "sampler.n_corrector"}
DENOISER_FLAGS = {"denoiser": "denoiser.kind", "model": "denoiser.model", "sigma_prior": "denoiser.sigma_prior"}


def _json_default(o):
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _emit(obj) -> None:
    print(json.dumps(_json_safe(obj), indent=1, sort_keys=True, default=_json_default))


# -- commands -------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = resolve_config(args, {**COMMON, "manifest": "data.manifest", "out": "data.out", "hours": "data.hours",
                                "test_hours": "data.test_hours", "test_mixtures": "data.test_mixtures",
                                "fold": "folds.fold", "n": "folds.n", "snr_mode": "data.snr_mode"})
    if args.synthetic:
        cfg.data.synthetic = True
    out = Path(cfg.data.out)
    if cfg.data.synthetic:
        log.info("generating synthetic databases under %s", out / "databases")
        manifests = synth_ensemble(out / "databases", cfg.seed)
    elif cfg.data.manifest:
        manifests = read_manifest(cfg.data.manifest)
        for m in manifests:
            m.validate()
    else:
        raise ConfigError("simulate needs --synthetic or a manifest")
    test_hours = cfg.data.test_hours if cfg.data.test_hours is not None else cfg.data.hours / 10
    plans = build_folds(manifests, cfg.folds.n, cfg.seed, train_hours=cfg.data.hours, test_hours=test_hours)
    plan = select_fold(plans, cfg.folds.fold)
    man = index_manifests(manifests)
    root = out / f"fold{cfg.folds.fold}_n{cfg.folds.n}"
    summary = {"root": str(root), "train_dbs": plan.train_dbs, "heldout_dbs": plan.heldout_dbs, "splits": {}}
    for split in args.splits.split(","):
        size = {"hours": cfg.data.hours} if split == "train" else (
            {"n_mixtures": cfg.data.test_mixtures} if cfg.data.test_mixtures else {"hours": test_hours})
        index = render_dataset(plan, man, split, root / split, cfg.seed, snr_mode=cfg.data.snr_mode,
                               workers=worker_count(), **size)
        n_flag = sum(r["metadata"]["infeasible"] for r in index["mixtures"])
        summary["splits"][split] = {"index": str(root / split / "index.json"), "n_mixtures": len(index["mixtures"]),
                                    "hours": round(index["total_hours"], 4), "infeasible_snr": n_flag}
    (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    _emit(summary)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = resolve_config(args, {**COMMON, "bins": "denoiser.n_sigma_bins", "time_samples": "denoiser.n_time_samples"})
    if args.shared:
        cfg.denoiser.per_frequency = False
    index = load_index(args.dataset)
    model = fit_from_index(index, cfg.schedule_params(), cfg.seed, n_sigma_bins=cfg.denoiser.n_sigma_bins,
                           n_time_samples=cfg.denoiser.n_time_samples, per_frequency=cfg.denoiser.per_frequency)
    model.diagnostics["config"] = cfg.to_dict()
    model.save(args.out)
    measured = model.diagnostics["measured_sigma_data"]
    log.info("compressed clean-speech coefficient std %.4f (configured sigma_data %.4f)", measured, model.sigma_data)
    _emit({"model": args.out, "measured_sigma_data": measured, "configured_sigma_data": model.sigma_data,
           "singular_fallback_bins": model.diagnostics["singular_fallback_bins"],
           "empty_bins_filled": model.diagnostics["empty_bins_filled"]})
    return EXIT_OK


def _enhance(cfg: ExperimentConfig, index: dict, out_dir: Path, **sampler_override) -> dict:
    return enhance_dataset(index, out_dir, cfg.denoiser.kind, cfg.sampler_config(**sampler_override),
                           cfg.schedule_params(), cfg.seed, model_path=cfg.denoiser.model,
                           sigma_prior=cfg.denoiser.sigma_prior, workers=worker_count(), config=cfg.to_dict())


def cmd_enhance(args) -> int:
    cfg = resolve_config(args, {**COMMON, **SAMPLER_FLAGS, **DENOISER_FLAGS})
    index = load_index(args.dataset)
    report = _enhance(cfg, index, Path(args.out))
    evals = sorted({r["n_evals"] for r in report["mixtures"] if r["status"] == "ok"})
    _emit({"out": args.out, "n_ok": report["n_ok"], "n_failed": report["n_failed"], "n_evals": evals,
           "errors": [r for r in report["mixtures"] if r["status"] != "ok"]})
    return EXIT_OK if report["n_failed"] == 0 else EXIT_DATA


def cmd_evaluate(args) -> int:
    index = load_index(args.dataset)
    labels = {}
    run = Path(args.enhanced) / "run.json"
    if run.is_file():
        rep = json.loads(run.read_text())
        labels = {"system": rep["system"], "sampler": rep["sampler"]["kind"], "n_steps": rep["sampler"]["n_steps"]}
    res = evaluate_batch(index, args.enhanced, labels, pesq_command=args.pesq_cmd, workers=worker_count())
    res.write_csv(args.out)
    agg = res.aggregate()
    if args.summary:
        write_rows(args.summary, agg, list(agg[0].keys()))
    _emit({"csv": args.out, "missing": res.missing, "aggregate": agg})
    return EXIT_OK if not res.missing else EXIT_DATA


def cmd_sweep(args) -> int:
    cfg = resolve_config(args, {**COMMON, **DENOISER_FLAGS})
    steps = [int(s) for s in args.steps.split(",")] if args.steps else cfg.sweep.steps
    samplers = args.samplers.split(",") if args.samplers else cfg.sweep.samplers
    out = Path(args.out)
    indices = [load_index(d) for d in args.dataset]
    rows, per_mixture = [], []
    for kind in samplers:
        for n in steps:
            for index in indices:
                cond = index.get("condition", "")
                run_dir = out / f"{cond}_{kind}_{n}"
                t0 = time.perf_counter()
                rep = _enhance(cfg, index, run_dir, kind=kind, n_steps=n)
                res = evaluate_batch(index, run_dir, {"system": cfg.denoiser.kind, "sampler": kind, "n_steps": n},
                                     pesq_command=cfg.pesq_command, workers=worker_count())
                per_mixture.extend(res.rows)
                agg = aggregate(res.rows, ("condition",))[0]
                evals = [r["n_evals"] for r in rep["mixtures"] if r["status"] == "ok"]
                rows.append({"sampler": kind, "n_steps": n, "condition": cond, "n_mixtures": agg["n_mixtures"],
                             "n_ok": agg["n_ok"], "n_evals": max(evals) if evals else "",
                             **{k: agg[k] for k in ("delta_snr", "delta_si_sdr", "delta_estoi", "delta_pesq")},
                             "flag": "" if agg["n_ok"] == agg["n_mixtures"] else "partial"})
                log.info("%s n=%d %s: dSNR %.3f dB (%.1f s)", kind, n, cond, agg["delta_snr"],
                         time.perf_counter() - t0)
    write_rows(out / "sweep.csv", rows, SWEEP_COLUMNS)
    write_rows(out / "metrics.csv", per_mixture, list(per_mixture[0].keys()) if per_mixture else ["mixture_id"])
    (out / "sweep.json").write_text(json.dumps({"config": cfg.to_dict(), "rows": rows}, indent=1,
                                               sort_keys=True, default=str) + "\n")
    _emit({"csv": str(out / "sweep.csv"), "rows": rows})
    return EXIT_OK if all(r["flag"] == "" for r in rows) else EXIT_DATA


def cmd_schedule_dump(args) -> int:
    cfg = resolve_config(args, {})
    sched = cfg.schedule_params()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "log_snr", "sigma", "scale", "beta", "lambda_clamped", "beta_clamped"])
    for t in np.linspace(0.0, sched.t_end, args.points):
        p = eval_point(sched, float(t))
        w.writerow([f"{t:.6f}", "" if p.log_snr is None else f"{p.log_snr:.12g}", f"{p.sigma:.12g}",
                    f"{p.scale:.12g}", f"{p.beta:.12g}", int(p.lambda_clamped), int(p.beta_clamped)])
    log.info("sigma_max %.6g, log-SNR clamp from t = %.12f", sigma_max(sched), lambda_clamp_time(sched))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffse", description="Diffusion-based speech enhancement toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config; flags override its keys")
        p.add_argument("--seed", type=int)

    def denoiser_flags(p):
        p.add_argument("--denoiser", choices=("oracle", "gaussian", "linear"))
        p.add_argument("--model", help="linear denoiser JSON file")
        p.add_argument("--sigma-prior", dest="sigma_prior", type=float)

    p = sub.add_parser("simulate", help="render train/test mixtures for one fold")
    common(p)
    p.add_argument("--synthetic", action="store_true", help="generate synthetic databases")
    p.add_argument("--manifest", help="manifest CSV of 5 speech, 5 noise and 5 BRIR databases")
    p.add_argument("--out")
    p.add_argument("--hours", type=float, help="training hours (test defaults to a tenth)")
    p.add_argument("--test-hours", dest="test_hours", type=float)
    p.add_argument("--test-mixtures", dest="test_mixtures", type=int, help="fixed test-set size instead of hours")
    p.add_argument("--fold", type=int)
    p.add_argument("--n", type=int, choices=(1, 4))
    p.add_argument("--snr-mode", dest="snr_mode", choices=("downmix", "binaural"))
    p.add_argument("--splits", default="train,matched,mismatched")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the linear denoiser on a training split")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int)
    p.add_argument("--time-samples", dest="time_samples", type=int)
    p.add_argument("--shared", action="store_true", help="one coefficient pair for all frequencies")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("enhance", help="enhance every mixture of a dataset")
    common(p)
    denoiser_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler", choices=("pc", "edm"))
    p.add_argument("--steps", type=int)
    p.add_argument("--s-churn", dest="s_churn", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--n-corrector", dest="n_corrector", type=int)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="metrics of enhanced files against targets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--out", required=True, help="per-mixture CSV")
    p.add_argument("--summary", help="aggregate CSV")
    p.add_argument("--pesq-cmd", dest="pesq_cmd", help="external scorer, e.g. 'pesq {reference} {degraded}'")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="both samplers over a range of step counts")
    common(p)
    denoiser_flags(p)
    p.add_argument("--dataset", required=True, action="append", help="test split directory (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", help="comma-separated, default 4,8,16,32,64")
    p.add_argument("--samplers", help="comma-separated subset of pc,edm")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("schedule", help="noise schedule utilities")
    ssub = p.add_subparsers(dest="schedule_command", required=True)
    d = ssub.add_parser("dump", help="tabulate the schedule as CSV")
    d.add_argument("--config")
    d.add_argument("--points", type=int, default=11)
    d.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("selftest", help="quick numerical self-checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (DomainError, DimensionError, FloatingPointError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
