"""Command-line entry point: train, sample, diagnose, verify, universality.

Every command resolves its configuration (defaults < YAML file < ``--set``
overrides < explicit flags), validates it completely, and only then creates
the output directory and writes ``resolved_config.yaml`` next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import dump_config, resolve
from .errors import DegenerateVariance, InvolutiveMCMCError

log = logging.getLogger("involutive_mcmc")

SUITE_NAMES = ["involution", "volume", "grad", "chi", "balance", "universality", "all"]


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _prepare_out(out: str, config: dict) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    dump_config(config, path / "resolved_config.yaml")
    return path


# ---------------------------------------------------------------- commands


def cmd_train(args, config) -> int:
    from .training import TrainingConfig, train

    tc = TrainingConfig(**config["train"], seed=config["seed"])
    target = tc.make_target()  # fail on unknown targets before any output exists
    if not target.has_sampler:
        raise InvolutiveMCMCError(f"target {tc.target!r} has no exact sampler")
    out = _prepare_out(args.out, config)

    def progress(row):
        if row["step"] % 100 == 0:
            log.info("step %d d_loss %.4g g_loss %.4g acceptance %.3f", row["step"],
                     row["d_loss"], row["g_loss"], row["mean_acceptance"])

    train(tc, out_dir=out, progress=progress)
    print(f"wrote {out / 'model.json'} and {out / 'train_log.csv'}")
    return 0


def cmd_sample(args, config) -> int:
    from .kernels import neural_kernel, run_chain, write_records_csv
    from .rng import stream
    from .serialization import load_model
    from .targets import get_target

    sc = config["sample"]
    if not sc["model"]:
        raise InvolutiveMCMCError("sample needs a model file (--model or sample.model)")
    if sc["steps"] < 1 or sc["chains"] < 1:
        raise InvolutiveMCMCError("sample.steps and sample.chains must be >= 1")
    net, meta = load_model(sc["model"])
    target = get_target(meta.get("target", "mix2"), **meta.get("target_params", {}))
    kernel = neural_kernel(net, target, monitor_rate=sc["monitor_rate"])
    init_sd = sc["init_sd"] if sc["init_sd"] is not None else float(meta.get("init_sd", 2.0))
    ids = range(sc["start_chain"], sc["start_chain"] + sc["chains"])
    init = np.stack([init_sd * stream(config["seed"], "sample-init", i).standard_normal(target.dim)
                     for i in ids])
    out = _prepare_out(args.out, config)
    run = run_chain(kernel, init, sc["steps"], config["seed"], start_chain=sc["start_chain"])
    write_records_csv(out / "records.csv", run)
    summary = {"acceptance_rate": run.acceptance_rate,
               "max_involution_residual": run.max_residual,
               "nonfinite_rejections": run.nonfinite,
               "chains": sc["chains"], "steps": sc["steps"], "seed": config["seed"],
               "target": target.describe(), "model": str(sc["model"]),
               "metadata": {"timestamp": _timestamp()}}
    _write_json(out / "summary.json", summary)
    print(f"acceptance rate {run.acceptance_rate:.4f}, max involution residual "
          f"{run.max_residual:.3e}; wrote {out / 'records.csv'}")
    return 0


def cmd_diagnose(args, config) -> int:
    from . import diagnostics as dg
    from .targets import get_target

    dc = config["diagnose"]
    if not dc["samples"]:
        raise InvolutiveMCMCError("diagnose needs a samples CSV (--samples or diagnose.samples)")
    target = get_target(dc["target"], **dc["target_params"])
    archive = dg.read_records_csv(dc["samples"])
    if archive.dim != target.dim:
        raise InvolutiveMCMCError(f"archive has {archive.dim} state columns, target "
                                  f"{dc['target']!r} has dimension {target.dim}")
    if not 0 <= dc["burn_in"] < archive.steps:
        raise InvolutiveMCMCError(f"burn_in must lie in [0, {archive.steps})")
    out = _prepare_out(args.out, config)

    steps, nll, _ = dg.expected_nll(archive, target)
    ref = None
    if target.has_sampler:
        from .rng import stream
        ref = dg.expected_nll(archive, target, target.sample(stream(config["seed"], "nll-ref"),
                                                             100_000))[2]
    with open(out / "nll.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "nll", "reference_nll"])
        for s, v in zip(steps, nll):
            w.writerow([int(s), repr(float(v)), repr(ref) if ref is not None else ""])

    max_lag = min(dc["max_lag"], archive.steps - 1)
    acf = None
    if max_lag >= 1:
        try:
            acf = dg.autocorrelation(archive, dc["coordinate"], max_lag)
        except DegenerateVariance as exc:
            log.warning("autocorrelation skipped: %s", exc)
    with open(out / "autocorrelation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "autocorrelation"])
        for lag, v in enumerate(acf if acf is not None else []):
            w.writerow([lag, repr(float(v))])

    window = archive.states[dc["burn_in"]:]
    report = {
        "chains": archive.chains, "steps": archive.steps, "target": target.describe(),
        "acceptance_rate": float(archive.accepted.mean()),
        "cross_mode_rate": dg.cross_mode_rate(archive, target.mode_of),
        "tv_distance": dg.tv_distance_histogram(window, target, dc["bins"], dc["coordinate"]),
        "mode_occupancy": dg.mode_occupancy(window, target.mode_of,
                                            int(np.max(target.mode_of(window.reshape(
                                                -1, archive.dim)))) + 1).tolist(),
        "final_nll": float(nll[-1]), "reference_nll": ref,
        "autocorrelation_lag1": float(acf[1]) if acf is not None and len(acf) > 1 else None,
        "burn_in": dc["burn_in"], "bins": dc["bins"],
        "metadata": {"timestamp": _timestamp(), "samples": str(dc["samples"])},
    }
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("acceptance_rate", "cross_mode_rate",
                                               "tv_distance")}))
    return 0


def cmd_verify(args, config) -> int:
    from .verify import format_check, run_suite

    vc = config["verify"]
    checks = run_suite(args.suite, seed=config["seed"], networks=vc["networks"],
                       inputs=vc["inputs"], steps=vc["steps"])
    for c in checks:
        print(format_check(c))
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_universality(args, config) -> int:
    from .universality import SWEEP_FIELDS, sweep

    uc = config["universality"]
    if not all(0 < e < 1 for e in uc["eps"]) or uc["n"] < 1 or uc["samples"] < 1:
        raise InvolutiveMCMCError("need 0 < eps < 1, n >= 1 and samples >= 1")
    out = _prepare_out(args.out, config)
    rows = sweep(uc["eps"], uc["samples"], config["seed"], n=uc["n"], test_phi=uc["test_phi"])
    with open(out / "universality.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for row in rows:
            w.writerow([repr(float(row[k])) for k in SWEEP_FIELDS])
    for row in rows:
        print(", ".join(f"{k}={row[k]:.6g}" for k in SWEEP_FIELDS))
    return 0


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "diagnose": cmd_diagnose,
            "verify": cmd_verify, "universality": cmd_universality}


# ---------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="involutive-mcmc",
                                     description="Involutive neural MCMC: train, sample, "
                                                 "diagnose and verify.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="adversarially train a generator")
    p = sub.add_parser("sample", parents=[common], help="run chains with a trained model")
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--steps", type=int)
    p.add_argument("--chains", type=int)
    p = sub.add_parser("diagnose", parents=[common], help="diagnostics for a records CSV")
    p.add_argument("--samples", help="records CSV written by sample")
    p.add_argument("--target", help="target name")
    p = sub.add_parser("verify", parents=[common], help="run a property suite")
    p.add_argument("suite", choices=SUITE_NAMES)
    sub.add_parser("universality", parents=[common], help="sweep the explicit construction")
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = {"sample": [("model", "model"), ("steps", "steps"), ("chains", "chains")],
             "diagnose": [("samples", "samples"), ("target", "target")]}
    out = []
    for attr, key in pairs.get(args.command, []):
        value = getattr(args, attr, None)
        if value is not None:
            out.append(f"{args.command}.{key}={json.dumps(value)}")
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve(args.config, [*args.overrides, *_flag_overrides(args)], args.seed)
        limiter = nullcontext()
        if args.threads is not None:
            if args.threads < 1:
                raise InvolutiveMCMCError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(limits=args.threads)
        with limiter:
            return COMMANDS[args.command](args, config)
    except (InvolutiveMCMCError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
