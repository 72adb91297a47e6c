"""Reference estimators and the NMSE metric.

Two baselines bracket the decoder: the raw-measurement estimator (no prior at
all, NMSE tracks -SNR) and a genie-aided Wiener filter granted the true
antenna-domain second-order statistics. The sweep driver runs estimators over
a (UE, SNR, seed) grid and averages NMSE ratios in the linear domain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelTensor,
    ESTIMATED,
    MEASURED,
    add_noise,
    noise_variance,
    postprocess,
    preprocess,
    synthesize,
)
from .fitting import FitConfig, fit

__all__ = [
    "EvalRecord",
    "nmse",
    "nmse_linear",
    "mmse_raw",
    "mmse_genie",
    "make_unn_estimator",
    "sweep",
    "records_to_csv",
    "records_to_curves",
]

NMSE_FLOOR_DB = -300.0


def nmse_linear(est, truth) -> float:
    """||est - truth||_F^2 / ||truth||_F^2 as a linear ratio."""
    e = np.asarray(getattr(est, "data", est))
    t = np.asarray(getattr(truth, "data", truth))
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: estimate {e.shape} vs truth {t.shape}")
    denom = float(np.sum(np.abs(t) ** 2))
    if denom == 0.0:
        raise ValueError("truth tensor has zero norm")
    return float(np.sum(np.abs(e - t) ** 2)) / denom


def nmse(est, truth) -> float:
    """Normalized mean squared error in dB, floored at -300 dB so an exact
    reconstruction stays finite."""
    ratio = nmse_linear(est, truth)
    if ratio <= 0.0:
        return NMSE_FLOOR_DB
    return float(max(10.0 * np.log10(ratio), NMSE_FLOOR_DB))


def mmse_raw(meas: ChannelTensor) -> ChannelTensor:
    """The direct-observation estimator: the measurement itself, untouched.
    Its NMSE equals -SNR dB in expectation."""
    if meas.role != MEASURED:
        raise ValueError("mmse_raw expects a measured tensor")
    return ChannelTensor(meas.data.copy(), role=ESTIMATED)


def mmse_genie(meas: ChannelTensor, truth: ChannelTensor, snr_db: float) -> ChannelTensor:
    """Genie-aided Wiener filter in the antenna dimension.

    R is the sample covariance of the true antenna vectors across all
    subcarriers and snapshots; every measured vector is filtered with
    R (R + sigma^2 I)^{-1}, sigma^2 being the calibrated per-coefficient noise
    power for `snr_db`. Simulation-only: it needs the ground truth.
    """
    t = truth.data
    x = meas.data
    if t.shape != x.shape:
        raise ValueError("measurement and truth must share dimensions")
    n_ant = t.shape[-1]
    vecs = t.reshape(-1, n_ant)
    # R[a, b] = E[h_a conj(h_b)] over all (subcarrier, snapshot) vectors
    r = (vecs.T @ vecs.conj()) / vecs.shape[0]
    sigma2 = noise_variance(float(np.sum(np.abs(t) ** 2)), t.size, snr_db)
    a = r + sigma2 * np.eye(n_ant)
    w = np.linalg.solve(a, r.conj().T).conj().T  # W = R (R + sigma^2 I)^{-1}
    est = x.reshape(-1, n_ant) @ w.T
    return ChannelTensor(est.reshape(x.shape), role=ESTIMATED)


def make_unn_estimator(spec, config: FitConfig):
    """Estimator closure that fits the decoder to the measurement and returns
    the recreated channel, matching the baseline call signature."""

    def estimate(meas: ChannelTensor, truth: ChannelTensor, snr_db: float) -> ChannelTensor:
        target = preprocess(meas)
        report = fit(spec, None, target, config)
        from .decoder import forward  # local import keeps module load light

        out = forward(spec, report.params)
        return postprocess(out, target.snapshot_norms, target.scale)

    return estimate


@dataclass
class EvalRecord:
    estimator: str
    ue_id: int
    snr_db: float
    seed_count: int
    nmse_db: float
    gain_db: float  # measurement NMSE minus estimator NMSE, same seeds


def sweep(scene, estimators: dict, ue_ids, snrs_db, seeds) -> list:
    """Full factorial run over (estimator, UE, SNR); NMSE ratios are averaged
    over the noise seeds in the linear domain before conversion to dB."""
    records = []
    seeds = list(seeds)
    for ue_id in ue_ids:
        truth = synthesize(scene, ue_id)
        for snr_db in snrs_db:
            measurements = [add_noise(truth, snr_db, seed) for seed in seeds]
            meas_ratio = float(np.mean([nmse_linear(m, truth) for m in measurements]))
            meas_db = 10.0 * np.log10(meas_ratio)
            for name, fn in estimators.items():
                ratios = [nmse_linear(fn(m, truth, snr_db), truth) for m in measurements]
                est_ratio = float(np.mean(ratios))
                est_db = max(10.0 * np.log10(est_ratio), NMSE_FLOOR_DB) if est_ratio > 0 else NMSE_FLOOR_DB
                records.append(
                    EvalRecord(
                        estimator=name,
                        ue_id=ue_id,
                        snr_db=float(snr_db),
                        seed_count=len(seeds),
                        nmse_db=est_db,
                        gain_db=meas_db - est_db,
                    )
                )
    return records


def records_to_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "ue", "snr_db", "seed_count", "nmse_db", "gain_db"])
        for r in records:
            writer.writerow(
                [r.estimator, r.ue_id, repr(r.snr_db), r.seed_count, repr(r.nmse_db), repr(r.gain_db)]
            )


def records_to_curves(records) -> dict:
    """Per-curve series (one curve per estimator/UE, NMSE over SNR), the data
    layout behind the usual NMSE-vs-SNR comparison plot."""
    curves: dict = {}
    for r in records:
        curves.setdefault(r.estimator, {}).setdefault(str(r.ue_id), []).append(
            [r.snr_db, r.nmse_db]
        )
    for per_ue in curves.values():
        for series in per_ue.values():
            series.sort(key=lambda p: p[0])
    return curves
