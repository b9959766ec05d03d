"""Build datasets and models from a resolved config, train them, compare and ablate."""
from __future__ import annotations

import copy
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path

from . import data as D
from .baselines import (
    FourierMlp,
    FourierMlpConfig,
    Siren,
    SirenConfig,
    matched_fourier_config,
    matched_siren_config,
)
from .config import resolve
from .metrics import EvalReport, evaluate
from .model import NstrConfig, NstrModel
from .optim import TrainConfig, TrainReport, train
from .transport import LossWeights

log = logging.getLogger(__name__)


def build_dataset(data_cfg: dict) -> D.SignalDataset:
    kind = data_cfg["kind"]
    if kind == "chirp":
        ds = D.make_chirp(int(data_cfg["samples"]), float(data_cfg["f0"]), float(data_cfg["f1"]))
    elif kind == "warped_texture":
        ds = D.make_warped_texture(int(data_cfg["resolution"]), float(data_cfg["base_freq"]), float(data_cfg["warp_strength"]))
    elif kind == "checkerboard":
        ds = D.make_checkerboard(int(data_cfg["resolution"]), int(data_cfg["cells"]))
    elif kind == "image":
        ds = D.load_image(data_cfg["path"], data_cfg.get("resolution"))
    elif kind == "audio":
        ds = D.load_audio(data_cfg["path"])
    else:
        raise ValueError(f"unknown data kind {kind!r}")
    if data_cfg.get("noise"):
        ds = ds.with_noise(float(data_cfg["noise"]), int(data_cfg.get("noise_seed", 0)))
    return ds


def nstr_config(model_cfg: dict, ds: D.SignalDataset) -> NstrConfig:
    return NstrConfig(
        dim=ds.dim,
        channels=ds.channels,
        n_bases=int(model_cfg["n_bases"]),
        grid_resolution=model_cfg["grid_resolution"],
        latent_dim=int(model_cfg["latent_dim"]),
        hyper_hidden=list(model_cfg["hyper_hidden"]),
        flow_hidden=list(model_cfg["flow_hidden"]),
        decoder_hidden=list(model_cfg["decoder_hidden"]),
        scalar_bottleneck=bool(model_cfg["scalar_bottleneck"]),
        train_basis=bool(model_cfg["train_basis"]),
        sample_resolution=max(ds.resolution),
        omega_max=model_cfg["omega_max"],
        grid_init_scale=float(model_cfg["grid_init_scale"]),
    )


def nstr_param_target(model_cfg: dict, ds: D.SignalDataset) -> int:
    return NstrModel(nstr_config(model_cfg, ds), seed=0).param_count()


def build_model(model_cfg: dict, ds: D.SignalDataset, seed: int):
    """Instantiate the configured model; baselines are width-matched to NSTR when asked."""
    kind = model_cfg["kind"]
    if kind == "nstr":
        return NstrModel(nstr_config(model_cfg, ds), seed=seed)
    hidden = model_cfg.get("hidden")
    match = model_cfg.get("match_params", True) and not hidden
    if kind == "fourier_mlp":
        if match:
            cfg = matched_fourier_config(nstr_param_target(model_cfg, ds), ds.dim, ds.channels, float(model_cfg["sigma"]), int(model_cfg["n_features"]))
        else:
            cfg = FourierMlpConfig(ds.dim, ds.channels, int(model_cfg["n_features"]), float(model_cfg["sigma"]), list(hidden or [256] * 4))
        return FourierMlp(cfg, seed=seed)
    if kind == "siren":
        if match:
            cfg = matched_siren_config(nstr_param_target(model_cfg, ds), ds.dim, ds.channels, float(model_cfg["omega0"]))
        else:
            cfg = SirenConfig(ds.dim, ds.channels, list(hidden or [256] * 3), float(model_cfg["omega0"]))
        return Siren(cfg, seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


def train_config(train_cfg: dict) -> TrainConfig:
    return TrainConfig(
        iterations=int(train_cfg["iterations"]),
        batch_size=int(train_cfg["batch_size"]),
        seed=int(train_cfg["seed"]),
        lr=float(train_cfg["lr"]),
        weights=LossWeights(float(train_cfg["lambda_pde"]), float(train_cfg["lambda_smooth"])),
        grad_mode=train_cfg["grad_mode"],
        log_every=int(train_cfg["log_every"]),
        task=train_cfg["task"],
    )


@dataclass
class RunResult:
    config: dict
    model: object
    dataset: D.SignalDataset
    report: TrainReport
    evaluation: EvalReport
    prediction: object


def run(cfg: dict, on_record=None, dataset: D.SignalDataset | None = None) -> RunResult:
    """Train one configured model and evaluate it on the full dataset."""
    ds = dataset if dataset is not None else build_dataset(cfg["data"])
    model = build_model(cfg["model"], ds, int(cfg["train"]["seed"]))
    report = train(model, ds, train_config(cfg["train"]), on_record=on_record)
    ev, pred = evaluate(model, ds, wall_ms=report.wall_ms)
    return RunResult(cfg, model, ds, report, ev, pred)


def with_overrides(cfg: dict, **sections) -> dict:
    out = copy.deepcopy(cfg)
    for section, values in sections.items():
        out[section].update(values)
    return resolve(out)


def median(values) -> float:
    return float(statistics.median(values))


# ---------------------------------------------------------------- compare


@dataclass
class CompareRow:
    method: str
    params: int
    psnr_db: float
    snr_db: float | None
    wall_ms: float
    rel_time: float = 1.0
    setting: str = ""


def method_train_overrides(cfg: dict, method: str) -> dict:
    """Train-section overrides for one compared method (its own lr, if set)."""
    lrs = cfg["compare"]["lrs"]
    return {"lr": float(lrs[method])} if method in lrs else {}


def compare(cfg: dict, dataset: D.SignalDataset | None = None) -> list[CompareRow]:
    """One row per method: median PSNR over seeds at matched parameter counts.

    The Fourier-MLP scale sigma is swept and the best median is kept.
    ``compare.lrs`` can give a method its own learning rate.
    Relative time is train wall-time over the Fourier-MLP's.
    """
    ds = dataset if dataset is not None else build_dataset(cfg["data"])
    seeds = list(cfg["compare"]["seeds"])
    rows: list[CompareRow] = []
    for method in cfg["compare"]["methods"]:
        settings = [{}]
        if method == "fourier_mlp":
            settings = [{"sigma": float(s)} for s in cfg["compare"]["sigmas"]]
        best: CompareRow | None = None
        for setting in settings:
            results = []
            for seed in seeds:
                c = with_overrides(cfg, model={"kind": method, **setting}, train={"seed": seed, **method_train_overrides(cfg, method)})
                results.append(run(c, dataset=ds))
            row = CompareRow(
                method=method,
                params=results[0].evaluation.param_count,
                psnr_db=median(r.evaluation.psnr_db for r in results),
                snr_db=median(r.evaluation.snr_db for r in results) if results[0].evaluation.snr_db is not None else None,
                wall_ms=median(r.report.wall_ms for r in results),
                setting=",".join(f"{k}={v}" for k, v in setting.items()),
            )
            log.info("compare %s %s: %.2f dB", method, row.setting, row.psnr_db)
            if best is None or row.psnr_db > best.psnr_db:
                best = row
        rows.append(best)
    ref = next((r.wall_ms for r in rows if r.method == "fourier_mlp"), None)
    for r in rows:
        r.rel_time = r.wall_ms / ref if ref else float("nan")
    return rows


def rows_to_csv(rows: list[CompareRow]) -> str:
    lines = ["method,params,psnr_db,snr_db,rel_time,setting"]
    for r in rows:
        snr = "" if r.snr_db is None else f"{r.snr_db:.4f}"
        lines.append(f"{r.method},{r.params},{r.psnr_db:.4f},{snr},{r.rel_time:.3f},{r.setting}")
    return "\n".join(lines) + "\n"


def rows_to_markdown(rows: list[CompareRow]) -> str:
    lines = ["| Method | Params | PSNR (dB) | Train Time |", "|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.method} | {r.params} | {r.psnr_db:.2f} | {r.rel_time:.2f}x |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- ablate


@dataclass
class AblationRun:
    setting: str
    seed: int
    evaluation: EvalReport
    result: RunResult | None = None


def ablation_settings(cfg: dict, axis: str) -> list[tuple[str, dict]]:
    a = cfg["ablate"]
    if axis == "pde":
        return [(f"lambda_pde={v}", {"train": {"lambda_pde": float(v)}}) for v in a["lambda_values"]]
    if axis == "K":
        return [(f"K={k}", {"model": {"n_bases": int(k)}}) for k in a["k_values"]]
    if axis == "decoder":
        return [(f"decoder_width={w}", {"model": {"decoder_hidden": [int(w), int(w)]}}) for w in a["decoder_widths"]]
    raise ValueError(f"unknown ablation axis {axis!r}; expected pde, K or decoder")


def ablate(cfg: dict, axis: str, dataset: D.SignalDataset | None = None, keep_models: bool = False) -> list[AblationRun]:
    """Run every setting along ``axis`` for every ablation seed."""
    ds = dataset if dataset is not None else build_dataset(cfg["data"])
    runs = []
    for name, overrides in ablation_settings(cfg, axis):
        for seed in cfg["ablate"]["seeds"]:
            sections = {k: dict(v) for k, v in overrides.items()}
            sections.setdefault("train", {})["seed"] = int(seed)
            c = with_overrides(cfg, **sections)
            res = run(c, dataset=ds)
            log.info("ablate %s seed %d: %.2f dB", name, seed, res.evaluation.psnr_db)
            runs.append(AblationRun(name, int(seed), res.evaluation, res if keep_models else None))
    return runs


def ablation_summary(runs: list[AblationRun]) -> list[dict]:
    out = []
    for name in dict.fromkeys(r.setting for r in runs):
        group = [r for r in runs if r.setting == name]
        out.append({
            "setting": name,
            "runs": len(group),
            "median_psnr_db": median(r.evaluation.psnr_db for r in group),
            "median_mse": median(r.evaluation.mse for r in group),
        })
    return out


def summary_markdown(summary: list[dict]) -> str:
    lines = ["| Setting | Runs | Median PSNR (dB) | Median MSE |", "|---|---|---|---|"]
    for s in summary:
        lines.append(f"| {s['setting']} | {s['runs']} | {s['median_psnr_db']:.2f} | {s['median_mse']:.3g} |")
    return "\n".join(lines) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
