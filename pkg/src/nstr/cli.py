"""Command line entry point: train, eval, compare, export-fields, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import experiments as X
from .config import ConfigError, load_config, resolve
from .data import save_audio, save_image
from .fields import probe_fields, write_dump
from .metrics import evaluate
from .optim import TrainingDiverged

log = logging.getLogger("nstr")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _limit_threads() -> None:
    n = os.environ.get("NSTR_THREADS")
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n))
    except (ImportError, ValueError):
        log.warning("could not apply NSTR_THREADS=%s", n)


def _apply_flags(cfg: dict, args) -> dict:
    train, model = {}, {}
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
    if getattr(args, "grad_mode", None):
        train["grad_mode"] = args.grad_mode
    if getattr(args, "scalar_bottleneck", False):
        model["scalar_bottleneck"] = True
    return X.with_overrides(cfg, train=train, model=model)


def _write_reconstruction(out_dir: Path, ds, pred) -> Path:
    if ds.dim == 2:
        path = out_dir / "reconstruction.png"
        save_image(path, ds.as_grid(pred))
    else:
        path = out_dir / "reconstruction.wav"
        rate = int(ds.meta.get("sample_rate", 44100)) or 44100
        save_audio(path, pred, sample_rate=rate)
    return path


def cmd_train(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_report.jsonl", "w") as fh:
        res = X.run(cfg, on_record=lambda r: fh.write(json.dumps(r, sort_keys=True) + "\n"))
    ckpt.save(out / "model.ckpt", res.model, run_config=cfg)
    summary = {
        "final_mse": res.report.final_mse,
        "initial_mse": res.report.initial_mse,
        "param_count": res.report.param_count,
        "psnr_db": res.evaluation.psnr_db,
        "sample_trace": res.report.sample_trace,
        "wall_ms": res.report.wall_ms,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"trained {res.model.kind}: mse {res.report.initial_mse:.4g} -> {res.report.final_mse:.4g}, "
          f"psnr {res.evaluation.psnr_db:.2f} dB; wrote {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, header = ckpt.load(args.checkpoint)
    cfg = load_config(args.config) if args.config else resolve(header.get("run_config") or {})
    ds = X.build_dataset(cfg["data"])
    report, pred = evaluate(model, ds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(report.to_json())
    path = _write_reconstruction(out, ds, pred)
    print(f"mse {report.mse:.6g} psnr {report.psnr_db:.2f} dB; wrote {out / 'eval.json'} and {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    rows = X.compare(cfg)
    out = Path(args.out_dir)
    X.write_text(out / "compare.csv", X.rows_to_csv(rows))
    X.write_text(out / "compare.md", X.rows_to_markdown(rows))
    print(X.rows_to_markdown(rows))
    return EXIT_OK


def cmd_export_fields(args) -> int:
    model, _ = ckpt.load(args.checkpoint)
    if model.kind != "nstr":
        raise ckpt.CheckpointError(f"field export needs an nstr checkpoint, got {model.kind}")
    dump = probe_fields(model, args.probe_resolution)
    bounds = write_dump(dump, args.out_dir)
    print(f"{len(dump)} probe records; mean residual {bounds['_summary']['mean_residual']:.4g}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    runs = X.ablate(cfg, args.axis)
    out = Path(args.out_dir)
    for r in runs:
        name = f"{r.setting}_seed{r.seed}".replace("=", "_")
        X.write_text(out / "runs" / f"{name}.json", r.evaluation.to_json())
    summary = X.ablation_summary(runs)
    X.write_text(out / "summary.json", json.dumps(summary, indent=2))
    X.write_text(out / "summary.md", X.summary_markdown(summary))
    print(X.summary_markdown(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nstr", description="Spectral transport INR training and evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default="runs/out")
        sp.add_argument("--grad-mode", choices=["fd", "analytic"])
        sp.add_argument("--scalar-bottleneck", action="store_true")

    sp = sub.add_parser("train", help="train one model and write a checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--config", help="dataset config (defaults to the checkpoint's echo)")
    sp.add_argument("--out-dir", default="runs/eval")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="NSTR vs Fourier-MLP vs SIREN at matched parameters")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("export-fields", help="dump S, dS/dx, F and the residual on a probe grid")
    sp.add_argument("checkpoint")
    sp.add_argument("--probe-resolution", type=int, default=32)
    sp.add_argument("--out-dir", default="runs/fields")
    sp.set_defaults(func=cmd_export_fields)

    sp = sub.add_parser("ablate", help="sweep lambda_pde, K or decoder width")
    common(sp)
    sp.add_argument("--axis", choices=["pde", "K", "decoder"], required=True)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        return args.func(args)
    except (ConfigError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
