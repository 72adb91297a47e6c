"""Experiment driver: scene generation, single-UE sweeps, transfer chains,
multi-user groups, and codec round-trips, reproducing the study layout end to
end and emitting CSV/JSON artifacts.

Invocation:

    unn-csi --profile desk --mode single --out results/
    unn-csi --config my_experiment.json --out results/

A profile supplies a complete default configuration (scene, decoder spec, fit
settings, SNR grid, seeds); an explicit config file and command-line flags
override it field by field. All randomness is seeded, so re-running a config
reproduces every CSV byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from math import prod
from pathlib import Path

import numpy as np

from . import baselines, codec, transfer as transfer_mod
from .channel import Scene, add_noise, load_scene, preprocess, synthesize
from .decoder import (
    DecoderSpec,
    compression_ratio,
    forward,
    load_spec,
    param_count,
)
from .fitting import FitConfig, FitDivergedError, fit
from .multiuser import build_group, fit_group
from .baselines import make_unn_estimator, mmse_genie, mmse_raw, nmse, records_to_curves

__all__ = ["ExperimentConfig", "Diagnostic", "validate", "run", "main"]

MODES = ("single", "transfer", "group", "codec", "sweep")
WORKER_ENV = "UNN_CSI_THREADS"

_BUILTIN_SCENES = {
    "desk": "scenes/street_canyon_desk.json",
    "full": "scenes/street_canyon.json",
}
_BUILTIN_SPECS = {
    "desk": "specs/single_ue_desk.json",
    "full": "specs/single_ue_full.json",
    "desk-group": "specs/group_desk.json",
    "full-group-a": "specs/group_full_a.json",
    "full-group-b": "specs/group_full_b.json",
}
_BUILTIN_PLANS = {
    "chain-base3": "plans/chain_base3.json",
    "chain-base6": "plans/chain_base6.json",
}

_PROFILES = {
    "desk": {
        "scene": "desk",
        "decoder_spec": "desk",
        "fit": {"iterations": 3000, "learning_rate": 2e-3, "trace_every": 100, "init_seed": 1},
        "snr_db": [0, 5, 10, 15, 20],
        "ues": [1, 2, 3, 4, 5, 6, 7],
        "seeds": [0, 1, 2],
        "transfer_plan": "chain-base3",
        "groups": [
            {"ues": [2, 3, 4], "spec": "desk-group", "iterations": 3000},
            {"ues": [5, 6, 7], "spec": "desk-group", "iterations": 3000},
        ],
        "workers": 1,
    },
    "full": {
        "scene": "full",
        "decoder_spec": "full",
        "fit": {"iterations": 25000, "learning_rate": 5e-3, "trace_every": 500, "init_seed": 1},
        "snr_db": [0, 5, 10, 15, 20],
        "ues": [1, 2, 3, 4, 5, 6, 7],
        "seeds": [0, 1, 2, 3, 4],
        "transfer_plan": "chain-base3",
        "groups": [
            {"ues": [2, 3, 4], "spec": "full-group-a", "iterations": 50000},
            {"ues": [5, 6, 7], "spec": "full-group-b", "iterations": 100000},
        ],
        "workers": 1,
    },
}


@dataclass
class Diagnostic:
    level: str  # "error" | "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


@dataclass
class ExperimentConfig:
    scene: str
    decoder_spec: str
    fit: dict
    snr_db: list
    ues: list
    mode: str = "single"
    out: str = "results"
    seeds: list = field(default_factory=lambda: [0])
    transfer_plan: str | None = None
    groups: list = field(default_factory=list)
    workers: int = 1

    def fit_config(self, iterations=None) -> FitConfig:
        kw = dict(self.fit)
        if iterations is not None:
            kw["iterations"] = iterations
        kw.setdefault("iterations", 1)
        if "betas" in kw:
            kw["betas"] = tuple(kw["betas"])
        return FitConfig(**kw)


def _data_path(mapping: dict, name: str) -> str:
    """Resolve a builtin data name or pass a filesystem path through."""
    if name in mapping:
        return str(resources.files("unn_csi").joinpath(mapping[name]))
    return name


def config_from_dict(doc: dict) -> ExperimentConfig:
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**doc)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def resolve_workers(config: ExperimentConfig, flag: int | None = None) -> int:
    env = os.environ.get(WORKER_ENV)
    if env is not None:
        return max(1, int(env))
    if flag is not None:
        return max(1, flag)
    return max(1, config.workers)


# ---------------------------------------------------------------------------
# validation


def _load_inputs(config: ExperimentConfig):
    scene = load_scene(_data_path(_BUILTIN_SCENES, config.scene))
    spec = load_spec(_data_path(_BUILTIN_SPECS, config.decoder_spec))
    return scene, spec


def _check_spec_against(scene: Scene, spec: DecoderSpec, diags: list, group_size: int | None = None):
    want_spatial = (
        (scene.n_sub, scene.n_sp) if group_size is None else (scene.n_sp, scene.n_sub, group_size)
    )
    names = ("N_sub", "N_sp") if group_size is None else ("N_sp", "N_sub", "M")
    for ax, (target, name) in enumerate(zip(want_spatial, names)):
        ups = sum(1 for row in spec.upsample_flags if ax < len(row) and row[ax])
        factor = 2**ups
        if target % factor != 0:
            diags.append(Diagnostic("error", f"{name}={target} is not divisible by {factor}"))
        elif ax < spec.n_spatial and spec.input_dims[ax] * factor != target:
            diags.append(
                Diagnostic(
                    "error",
                    f"seed extent {spec.input_dims[ax]} with {ups} upsamplings gives "
                    f"{spec.input_dims[ax] * factor}, scene wants {name}={target}",
                )
            )
    if spec.n_spatial != len(want_spatial):
        diags.append(
            Diagnostic(
                "error",
                f"decoder has {spec.n_spatial} spatial modes, experiment needs {len(want_spatial)}",
            )
        )
    if spec.output_width != 2 * scene.n_ant:
        diags.append(
            Diagnostic("error", f"output width must be {2 * scene.n_ant}, spec has {spec.output_width}")
        )
    extent = prod(spec.output_dims)
    if param_count(spec) >= extent:
        diags.append(
            Diagnostic(
                "warning",
                f"decoder is not under-parameterized ({param_count(spec)} parameters for "
                f"a {extent}-entry target)",
            )
        )


def validate(config: ExperimentConfig) -> list:
    """Static checks; returns diagnostics and never mutates or runs anything."""
    diags: list = []
    if config.mode not in MODES:
        diags.append(Diagnostic("error", f"unknown mode {config.mode!r}"))
        return diags
    try:
        scene = load_scene(_data_path(_BUILTIN_SCENES, config.scene))
    except (OSError, ValueError, KeyError) as exc:
        diags.append(Diagnostic("error", f"cannot load scene {config.scene!r}: {exc}"))
        return diags
    try:
        spec = load_spec(_data_path(_BUILTIN_SPECS, config.decoder_spec))
    except (OSError, ValueError, KeyError) as exc:
        diags.append(Diagnostic("error", f"cannot load decoder spec {config.decoder_spec!r}: {exc}"))
        return diags

    if not config.snr_db:
        diags.append(Diagnostic("error", "snr_db list is empty"))
    if not config.seeds:
        diags.append(Diagnostic("error", "seed list is empty"))
    if spec.seed_rule.half_range <= 0:
        diags.append(Diagnostic("error", "seed rule has zero half-range; the decoder input is all zeros"))
    missing = [u for u in config.ues if u not in scene.ue_ids]
    if missing:
        diags.append(Diagnostic("error", f"scene has no UEs {missing}"))

    if config.mode in ("single", "sweep", "codec", "transfer"):
        _check_spec_against(scene, spec, diags)
    if config.mode == "transfer":
        if not config.transfer_plan:
            diags.append(Diagnostic("error", "transfer mode needs a transfer_plan"))
        else:
            try:
                plan = transfer_mod.load_plan(_data_path(_BUILTIN_PLANS, config.transfer_plan))
            except (OSError, ValueError, KeyError) as exc:
                diags.append(Diagnostic("error", f"cannot load transfer plan: {exc}"))
            else:
                absent = [u for u in plan.ue_ids if u not in scene.ue_ids]
                if absent:
                    diags.append(Diagnostic("error", f"transfer plan references unknown UEs {absent}"))
    if config.mode == "group":
        if not config.groups:
            diags.append(Diagnostic("error", "group mode needs a non-empty groups list"))
        for entry in config.groups:
            ues = entry["ues"] if isinstance(entry, dict) else list(entry)
            spec_name = entry.get("spec", config.decoder_spec) if isinstance(entry, dict) else config.decoder_spec
            try:
                gspec = load_spec(_data_path(_BUILTIN_SPECS, spec_name))
            except (OSError, ValueError, KeyError) as exc:
                diags.append(Diagnostic("error", f"cannot load group spec {spec_name!r}: {exc}"))
                continue
            _check_spec_against(scene, gspec, diags, group_size=len(ues))
    return diags


# ---------------------------------------------------------------------------
# artifact helpers


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------------------
# mode drivers


def _run_single_cell(args):
    scene, spec, fit_cfg, ue_id, snr_db, seed = args
    truth = synthesize(scene, ue_id)
    meas = add_noise(truth, snr_db, seed)
    target = preprocess(meas)
    meas_nmse = nmse(meas, truth)
    try:
        report = fit(spec, None, target, fit_cfg)
    except FitDivergedError as exc:
        return {
            "ue": ue_id, "snr_db": snr_db, "seed": seed, "status": "diverged",
            "nmse_db": float("nan"), "meas_nmse_db": meas_nmse, "gain_db": float("nan"),
            "final_mse": float("nan"), "error": str(exc), "trace": None, "report_blob": None,
        }
    from .channel import postprocess

    est = postprocess(forward(spec, report.params), target.snapshot_norms, target.scale)
    est_nmse = nmse(est, truth)
    blob = codec.encode(spec, report.params, target.snapshot_norms, target.scale)
    return {
        "ue": ue_id, "snr_db": snr_db, "seed": seed, "status": "ok",
        "nmse_db": est_nmse, "meas_nmse_db": meas_nmse, "gain_db": meas_nmse - est_nmse,
        "final_mse": report.final_mse, "error": "", "trace": report.trace, "report_blob": blob,
    }


def _mode_single(config: ExperimentConfig, scene, spec, out: Path, workers: int) -> dict:
    cells = [
        (scene, spec, config.fit_config(), ue, snr, seed)
        for ue in config.ues
        for snr in config.snr_db
        for seed in config.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_single_cell, cells))
    else:
        results = [_run_single_cell(c) for c in cells]

    (out / "fit_traces").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    rows = []
    diverged = 0
    for r in results:
        tag = f"ue{r['ue']}_snr{r['snr_db']}_seed{r['seed']}"
        if r["trace"] is not None:
            trace_path = out / "fit_traces" / f"{tag}.csv"
            _write_csv(trace_path, ["iteration", "mse"], [(it, repr(m)) for it, m in r["trace"]])
        if r["report_blob"] is not None:
            _atomic_write_bytes(out / "reports" / f"{tag}.csir", r["report_blob"])
        if r["status"] == "diverged":
            diverged += 1
        rows.append(
            [
                r["ue"], _fmt(float(r["snr_db"])), r["seed"], r["status"],
                _fmt(r["nmse_db"]), _fmt(r["meas_nmse_db"]), _fmt(r["gain_db"]), _fmt(r["final_mse"]),
                config.fit_config().iterations,
            ]
        )
    _write_csv(
        out / "results.csv",
        ["ue", "snr_db", "seed", "status", "nmse_db", "meas_nmse_db", "gain_db", "final_mse", "iterations"],
        rows,
    )
    return {"cells": len(results), "diverged": diverged}


def _mode_transfer(config: ExperimentConfig, scene, spec, out: Path) -> dict:
    plan = transfer_mod.load_plan(_data_path(_BUILTIN_PLANS, config.transfer_plan))
    snr_db = float(config.snr_db[0])
    seed = config.seeds[0]
    fit_cfg = config.fit_config()

    targets, truths = {}, {}
    for ue_id in plan.ue_ids:
        truth = synthesize(scene, ue_id)
        truths[ue_id] = truth
        targets[ue_id] = preprocess(add_noise(truth, snr_db, seed))

    results = transfer_mod.run_transfer(plan, spec, targets, truths, fit_cfg)

    # control arm: every chain target fitted from random init with the same budget
    controls = {}
    for step in plan.chain:
        control_plan = transfer_mod.TransferPlan(base=step.target, chain=())
        controls[step.target] = transfer_mod.run_transfer(
            control_plan, spec, targets, truths, fit_cfg
        )[step.target]

    rows = []
    for ue_id, res in results.items():
        rows.append(
            [ue_id, res.init_from if res.init_from is not None else "", "transfer" if res.init_from is not None else "random",
             _fmt(snr_db), seed, _fmt(res.nmse_db), _fmt(res.report.final_mse), res.report.iterations]
        )
    for ue_id, res in controls.items():
        rows.append(
            [ue_id, "", "random", _fmt(snr_db), seed, _fmt(res.nmse_db), _fmt(res.report.final_mse), res.report.iterations]
        )
    _write_csv(
        out / "results.csv",
        ["ue", "init_from", "init_kind", "snr_db", "seed", "nmse_db", "final_mse", "iterations"],
        rows,
    )

    dist_rows = []
    for step in plan.chain:
        anchor = results[step.init_from].report.params
        tl = transfer_mod.weight_distance(anchor, results[step.target].report.params)
        rnd = transfer_mod.weight_distance(anchor, controls[step.target].report.params)
        for layer, d in enumerate(tl.per_layer, start=1):
            dist_rows.append((layer, d, f"transfer:{step.init_from}->{step.target}"))
        for layer, d in enumerate(rnd.per_layer, start=1):
            dist_rows.append((layer, d, f"random:{step.init_from}->{step.target}"))
    lines = [",".join(["layer", "distance", "init_kind"])]
    for layer, d, kind in dist_rows:
        lines.append(f"{layer},{repr(float(d))},{kind}")
    _atomic_write_text(out / "weight_distances.csv", "\n".join(lines) + "\n")
    return {"ues": len(results), "chain": len(plan.chain)}


def _mode_group(config: ExperimentConfig, scene, out: Path) -> dict:
    snr_db = float(config.snr_db[0])
    seed = config.seeds[0]
    rows = []
    summaries = []
    for gi, entry in enumerate(config.groups):
        if isinstance(entry, dict):
            ues = list(entry["ues"])
            spec_name = entry.get("spec", config.decoder_spec)
            iters = entry.get("iterations")
        else:
            ues, spec_name, iters = list(entry), config.decoder_spec, None
        gspec = load_spec(_data_path(_BUILTIN_SPECS, spec_name))
        fit_cfg = config.fit_config(iterations=iters)
        truths, targets = {}, []
        for ue_id in ues:
            truth = synthesize(scene, ue_id)
            truths[ue_id] = truth
            targets.append(preprocess(add_noise(truth, snr_db, seed)))
        group = build_group(targets, ues)
        report, errors = fit_group(gspec, group, fit_cfg, truths=truths)
        (out / "reports").mkdir(exist_ok=True)
        blob = codec.encode(gspec, report.params, group.snapshot_norms, group.scales)
        _atomic_write_bytes(out / "reports" / f"group{gi}.csir", blob)
        for ue_id in ues:
            rows.append(
                (gi, ue_id, _fmt(snr_db), _fmt(errors[ue_id]), fit_cfg.iterations,
                 param_count(gspec), _fmt(compression_ratio(gspec)))
            )
        summaries.append(
            {"group": gi, "ues": ues, "param_count": param_count(gspec),
             "compression_ratio": compression_ratio(gspec), "final_mse": report.final_mse}
        )
    lines = [",".join(["group", "ue", "snr_db", "nmse_db", "iterations", "param_count", "compression_ratio"])]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    _atomic_write_text(out / "results.csv", "\n".join(lines) + "\n")
    return {"groups": summaries}


def _mode_codec(config: ExperimentConfig, scene, spec, out: Path) -> dict:
    ue_id, snr_db, seed = config.ues[0], float(config.snr_db[0]), config.seeds[0]
    truth = synthesize(scene, ue_id)
    meas = add_noise(truth, snr_db, seed)
    target = preprocess(meas)
    report = fit(spec, None, target, config.fit_config())
    est = forward(spec, report.params)
    blob = codec.encode(spec, report.params, target.snapshot_norms, target.scale)
    (out / "reports").mkdir(exist_ok=True)
    _atomic_write_bytes(out / "reports" / f"ue{ue_id}_snr{snr_db}_seed{seed}.csir", blob)

    spec_rx, params_rx, norms_rx, scale_rx = codec.decode(blob)
    est_rx = forward(spec_rx, params_rx)
    from .channel import postprocess

    tx = postprocess(est, target.snapshot_norms, target.scale)
    rx = postprocess(est_rx, norms_rx, scale_rx)
    bit_exact = bool(np.array_equal(est, est_rx)) and bool(np.array_equal(tx.data, rx.data))
    raw_bytes = 8 * truth.data.size
    return {
        "bit_exact": bit_exact,
        "payload_bytes": codec.payload_bytes(spec),
        "report_bytes": len(blob),
        "raw_csi_bytes": raw_bytes,
        "payload_over_raw": codec.payload_bytes(spec) / raw_bytes,
        "nmse_db_tx": nmse(tx, truth),
        "nmse_db_rx": nmse(rx, truth),
    }


def _mode_sweep(config: ExperimentConfig, scene, spec, out: Path) -> dict:
    estimators = {
        "mmse_raw": lambda m, t, s: mmse_raw(m),
        "mmse_genie": mmse_genie,
        "unn": make_unn_estimator(spec, config.fit_config()),
    }
    records = baselines.sweep(scene, estimators, config.ues, config.snr_db, config.seeds)
    lines = [",".join(["estimator", "ue", "snr_db", "seed_count", "nmse_db", "gain_db"])]
    for r in records:
        lines.append(
            f"{r.estimator},{r.ue_id},{repr(r.snr_db)},{r.seed_count},{repr(r.nmse_db)},{repr(r.gain_db)}"
        )
    _atomic_write_text(out / "results.csv", "\n".join(lines) + "\n")
    _atomic_write_text(
        out / "curves.json", json.dumps(records_to_curves(records), sort_keys=True, indent=2) + "\n"
    )
    return {"records": len(records)}


def run(config: ExperimentConfig, workers: int | None = None) -> int:
    """Execute the configured mode; returns a process exit code."""
    diags = validate(config)
    for d in diags:
        print(d, file=sys.stderr)
    if any(d.level == "error" for d in diags):
        return 2

    scene, spec = _load_inputs(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    n_workers = resolve_workers(config, workers)

    if config.mode == "single":
        extra = _mode_single(config, scene, spec, out, n_workers)
    elif config.mode == "transfer":
        extra = _mode_transfer(config, scene, spec, out)
    elif config.mode == "group":
        extra = _mode_group(config, scene, out)
    elif config.mode == "codec":
        extra = _mode_codec(config, scene, spec, out)
    elif config.mode == "sweep":
        extra = _mode_sweep(config, scene, spec, out)
    else:  # pragma: no cover - guarded by validate
        return 2

    coeffs = scene.n_sub * scene.n_sp * scene.n_ant
    summary = {
        "mode": config.mode,
        "scene": config.scene,
        "decoder_spec": config.decoder_spec,
        "param_count": param_count(spec),
        "complex_coefficients": coeffs,
        "compression_ratio": param_count(spec) / coeffs,
        "snr_db": list(config.snr_db),
        "ues": list(config.ues),
        "seeds": list(config.seeds),
        "workers": n_workers,
    }
    summary.update(extra)
    _atomic_write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# command line


def _parse_seed_list(text: str) -> list:
    return [int(s) for s in text.split(",") if s.strip() != ""]


def build_config(args) -> ExperimentConfig:
    doc: dict = {}
    if args.profile:
        doc.update(json.loads(json.dumps(_PROFILES[args.profile])))
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc.update(json.load(fh))
    if not doc:
        raise SystemExit("pass --profile desk|full and/or --config <path>")
    if args.mode:
        doc["mode"] = args.mode
    if args.out:
        doc["out"] = args.out
    if args.seed_list:
        doc["seeds"] = _parse_seed_list(args.seed_list)
    if args.workers is not None:
        doc["workers"] = args.workers
    return config_from_dict(doc)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="unn-csi",
        description="Recreate MIMO-OFDM channels by fitting under-parameterized decoders.",
    )
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--mode", choices=MODES, help="experiment mode")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, help=f"worker pool size (env {WORKER_ENV} overrides)")
    parser.add_argument("--profile", choices=sorted(_PROFILES), help="built-in default configuration")
    parser.add_argument("--seed-list", help="comma-separated noise seeds")
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(config, workers=args.workers)


if __name__ == "__main__":
    raise SystemExit(main())
