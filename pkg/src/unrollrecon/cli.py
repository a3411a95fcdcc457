"""Command-line interface: ``python -m unrollrecon <command> ...``.

Commands: simulate, train, reconstruct, evaluate, ablate, verify.
Settings resolve as defaults < ``--preset`` < command-line flags <
``--config`` file, and the resolved config is written next to every output.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evalkit, pipeline
from .config import build, load_config_file, preset
from .dip import DipConfig
from .mri import ConfigError, SenseSystem
from .networks import NetConfig
from .phantom import DatasetError, build_dataset, read_dataset, write_dataset
from .solvers import CSConfig, NumericError
from .tensor import ContainerError
from .unrolled import METHOD_KINDS, TrainConfig, UnrolledModel, activation_count, build_model, evaluate_model, train

logger = logging.getLogger("unrollrecon")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ROOT_ENV = "UNROLLRECON_OUT"
BASELINES = ("zero-filled", "cs", "dip")


class DataError(RuntimeError):
    """Input data missing or unusable (exit code 3)."""


def _out_dir(args, command):
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / command


def _ensure_writable(directory):
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {directory} is not writable: {exc.strerror or exc}") from exc


def _resolve(args, flag_overrides):
    """defaults < preset < flags < config file."""
    cfg = preset(args.preset)
    flags = {sec: {k: v for k, v in vals.items() if v is not None} for sec, vals in flag_overrides.items()}
    cfg = cfg.merged({k: v for k, v in flags.items() if v}, source="flags")
    if args.config:
        cfg = cfg.merged(load_config_file(args.config), source=str(args.config))
    return cfg


def _load_dataset(path):
    if path is None:
        raise ConfigError("--dataset is required")
    return read_dataset(path)


def _split_indices(ds, split, max_slices=None):
    if split not in ds.splits:
        raise ConfigError(f"unknown split {split!r}; dataset has {sorted(ds.splits)}")
    idx = list(ds.splits[split])
    if not idx:
        raise DataError(f"split {split!r} is empty")
    return idx[:max_slices] if max_slices else idx


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--size expects H,W, got {text!r}") from exc
    return [h, w]


# -- commands ---------------------------------------------------------------


def cmd_simulate(args):
    cfg = _resolve(
        args,
        {
            "dataset": {
                "slices": args.slices,
                "size": _parse_size(args.size) if args.size else None,
                "coils": args.coils,
                "seed": args.seed,
                "noise": args.noise,
            }
        },
    )
    d = cfg.dataset
    h, w = d.size
    if d.slices < 1:
        raise ConfigError("--slices must be >= 1")
    if h % 4 or w % 4 or h < 32 or w < 32:
        raise ConfigError(f"--size {h},{w}: extents must be >= 32 and divisible by 4")
    if d.coils < 1:
        raise ConfigError("--coils must be >= 1")
    out = _out_dir(args, "dataset")
    _ensure_writable(out)
    ds = build_dataset(d.slices, h, w, d.coils, d.seed, d.noise, d.R, d.center_fraction)
    write_dataset(ds, out)
    cfg.write(out)
    counts = {k: len(v) for k, v in ds.splits.items()}
    print(f"wrote {d.slices} slices ({h}x{w}, {d.coils} coils) to {out}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


def _train_one(cfg, ds, out, method=None, unroll_n=None):
    m = cfg.model
    method = method or m.method
    n = m.unroll_n if unroll_n is None else unroll_n
    if method not in METHOD_KINDS:
        raise ConfigError(f"--method must be one of {sorted(METHOD_KINDS)} for training, got {method!r}")
    if n < 1:
        raise ConfigError(f"--unroll-n {n}: at least one proximal/data-consistency iteration is required")
    net_cfg = build(NetConfig, m)
    model = build_model(method, n, net_cfg, m.cg_iterations, m.lam)
    tcfg = build(TrainConfig, cfg.train)
    log = train(model, ds, tcfg, out_dir=out)
    model.save(out / "checkpoint", {"method": method, "epoch": int(np.argmax([r["val_psnr"] for r in log]) + 1)})
    return model, log


def cmd_train(args):
    cfg = _resolve(
        args,
        {"model": {"method": args.method, "unroll_n": args.unroll_n}, "train": {"epochs": args.epochs}},
    )
    ds = _load_dataset(args.dataset)
    out = _out_dir(args, "train")
    _ensure_writable(out)
    cfg.write(out)
    t0 = time.time()
    model, log = _train_one(cfg, ds, out)
    best = max(log, key=lambda r: r["val_psnr"])
    print(
        f"trained {cfg.model.method} N={model.n_unroll} ({model.prox.num_params()} parameters) in "
        f"{time.time() - t0:.0f}s; best val PSNR {best['val_psnr']:.2f} dB at epoch {best['epoch']}; "
        f"checkpoint {out / 'checkpoint'}"
    )
    return EXIT_OK


def cmd_reconstruct(args):
    cfg = _resolve(args, {"eval": {"split": args.split, "R": args.r, "max_slices": args.slices, "jobs": args.jobs}})
    ds = _load_dataset(args.dataset)
    e = cfg.eval
    idx = _split_indices(ds, e.split, e.max_slices)
    out = _out_dir(args, "reconstruct")
    _ensure_writable(out)
    extra = {}
    if args.checkpoint:
        try:
            model, meta = UnrolledModel.load(args.checkpoint)
        except (OSError, KeyError) as exc:
            raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
        method = meta.get("method", "edsr-unrolled")
        if args.method and args.method != method:
            raise ConfigError(f"checkpoint {args.checkpoint} holds a {method} model, not {args.method}")
        recons = pipeline.model_split(model, ds, idx, e.R)
        extra["checkpoint"] = str(args.checkpoint)
    elif args.method == "zero-filled":
        method, recons = "zero-filled", pipeline.zero_filled(ds, idx, e.R)
    elif args.method == "cs":
        method = "cs"
        lam = cfg.cs.lambda_tv
        if args.tune:
            lam, scores = pipeline.tune_cs(ds, e.R, cfg.cs.tune_grid, build(CSConfig, cfg.cs), cfg.cs.tune_slices, e.jobs)
            extra["tuning"] = scores
            try:
                pipeline.record_cs_tuning(args.dataset, e.R, lam, scores)
            except OSError as exc:
                logger.warning("could not record tuned lambda in %s: %s", args.dataset, exc)
        else:
            recorded = pipeline.recorded_cs_lambda(args.dataset, e.R)
            if recorded is not None:
                lam = recorded
        cfg.cs.lambda_tv = lam
        extra["lambda_tv"] = lam
        recons = pipeline.cs_split(ds, idx, e.R, build(CSConfig, cfg.cs), e.jobs)
    elif args.method == "dip":
        method = "dip"
        recons = pipeline.dip_split(ds, idx, e.R, build(DipConfig, cfg.dip), e.jobs, log_dir=out)
    elif args.method in METHOD_KINDS:
        raise ConfigError(f"--method {args.method} needs --checkpoint")
    else:
        raise ConfigError("give --checkpoint or --method {zero-filled,cs,dip}")
    pipeline.write_recon_dir(out, method, e.R, e.split, recons, extra)
    cfg.write(out)
    med = pipeline.psnr_median(recons, ds)
    print(f"{method} R={e.R:g}: {len(recons)} slices of split {e.split!r} -> {out} (median PSNR {med:.2f} dB)")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _resolve(args, {"eval": {"split": args.split, "threshold": args.threshold}})
    ds = _load_dataset(args.dataset)
    out = Path(args.out) if args.out else _out_dir(args, "evaluate") / "report"
    _ensure_writable(out.parent)
    records, missing = evalkit.evaluate_run(args.recon, ds, cfg.eval.split, cfg.eval.threshold)
    cfg.write(out.parent, out.name + "_config.json")
    _, text = evalkit.write_report(records, out, missing, {"config": cfg.to_dict()})
    print(text)
    if missing:
        print("missing reconstruction directories: " + ", ".join(missing), file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_ablate(args):
    ns = [int(v) for v in args.unroll_ns.split(",") if v.strip()]
    if not ns:
        raise ConfigError("--unroll-ns needs at least one value")
    cfg = _resolve(args, {"train": {"epochs": args.epochs}, "model": {"method": args.method}})
    ds = _load_dataset(args.dataset)
    out = _out_dir(args, "ablate")
    _ensure_writable(out)
    cfg.write(out)
    val = _split_indices(ds, "val")
    rows = []
    for n in ns:
        model, log = _train_one(cfg, ds, out / f"N{n}", unroll_n=n)
        _, psnrs, ssims = evaluate_model(model, ds, val, cfg.eval.R)
        y, mask = ds.kspace(val[0], cfg.eval.R)
        acts = activation_count(model, SenseSystem.stack([SenseSystem(mask, ds.coil_maps(val[0]))]), y[None])
        rows.append(
            {
                "N": n,
                "val_psnr_mean": float(np.mean(psnrs)),
                "val_psnr_median": float(np.median(psnrs)),
                "val_ssim_mean": float(np.mean(ssims)),
                "params": model.prox.num_params() + 1,
                "activations_per_sample": acts,
                "epochs": len(log),
            }
        )
        print(f"N={n}: val PSNR {rows[-1]['val_psnr_mean']:.2f} dB, SSIM {rows[-1]['val_ssim_mean']:.3f}")
    head = f"{'N':>3}  {'PSNR (dB)':>10}  {'SSIM':>6}  {'params':>8}  {'activations':>12}"
    lines = [head, "-" * len(head)]
    lines += [
        f"{r['N']:>3}  {r['val_psnr_mean']:>10.2f}  {r['val_ssim_mean']:>6.3f}  {r['params']:>8d}  {r['activations_per_sample']:>12d}"
        for r in rows
    ]
    lines.append("activations: values recorded for backward in one single-sample forward pass")
    text = "\n".join(lines)
    doc = {"rows": rows, "reference": {str(k): v for k, v in evalkit.REFERENCE_ABLATION.items()}, "config": cfg.to_dict()}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2) + "\n")
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_checks

    results = run_checks()
    failed = [name for name, ok, _, _ in results if not ok]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; its values override flags")
    common.add_argument("--preset", default="fast", help="base settings: 'fast' (desk CPU, default) or 'reference'")
    common.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<command> or runs/<command>)")
    common.add_argument("--log-level", default="INFO")

    p = argparse.ArgumentParser(prog="unrollrecon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="build a synthetic phantom dataset")
    s.add_argument("--slices", type=int)
    s.add_argument("--size", help="H,W")
    s.add_argument("--coils", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", type=float)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="train an unrolled model")
    t.add_argument("--dataset")
    t.add_argument("--method", choices=sorted(METHOD_KINDS))
    t.add_argument("--unroll-n", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct a split")
    r.add_argument("--dataset")
    r.add_argument("--checkpoint")
    r.add_argument("--method", choices=sorted(BASELINES + tuple(METHOD_KINDS)))
    r.add_argument("--split")
    r.add_argument("--r", type=float)
    r.add_argument("--slices", type=int, help="only the first N slices of the split")
    r.add_argument("--tune", action="store_true", help="grid-search the CS TV weight on the val split")
    r.add_argument("--jobs", type=int, help="parallel slices for cs/dip (default: hardware threads)")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", parents=[common], help="score reconstruction directories")
    e.add_argument("--recon", nargs="+", required=True)
    e.add_argument("--dataset")
    e.add_argument("--split")
    e.add_argument("--threshold", type=float)
    e.add_argument("--jobs", type=int)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", parents=[common], help="train and compare unroll counts")
    a.add_argument("--dataset")
    a.add_argument("--unroll-ns", default="5,7,9")
    a.add_argument("--epochs", type=int)
    a.add_argument("--method", choices=sorted(METHOD_KINDS))
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify", parents=[common], help="run the fast invariant suite")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetError, ContainerError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
