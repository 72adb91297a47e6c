"""Transfer learning across neighboring users.

A base UE is fitted from random initialization; each chain entry is then
fitted with the same iteration budget but initialized from an already-fitted
neighbor's parameters (kernels and batch-norm pairs alike). The per-layer
Frobenius distances between fitted kernel sets quantify how much the warm
start constrained the search.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .baselines import nmse
from .channel import postprocess
from .decoder import DecoderSpec, ParamSet, forward
from .fitting import FitConfig, FitReport, fit

__all__ = [
    "TransferStep",
    "TransferPlan",
    "TransferResult",
    "WeightDistance",
    "run_transfer",
    "weight_distance",
    "plan_from_json",
    "plan_to_json",
    "load_plan",
    "distances_to_csv",
]


@dataclass(frozen=True)
class TransferStep:
    target: int
    init_from: int | None  # None = random initialization (control arm)


@dataclass(frozen=True)
class TransferPlan:
    base: int
    chain: tuple

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        fitted = {self.base}
        for step in self.chain:
            if step.target in fitted:
                raise ValueError(f"UE {step.target} is fitted twice in the plan")
            if step.init_from is not None and step.init_from not in fitted:
                raise ValueError(
                    f"UE {step.target} initializes from {step.init_from}, "
                    "which is neither the base nor an earlier target"
                )
            fitted.add(step.target)

    @property
    def ue_ids(self) -> list:
        return [self.base] + [s.target for s in self.chain]


@dataclass
class TransferResult:
    ue_id: int
    init_from: int | None
    report: FitReport
    nmse_db: float


def run_transfer(
    plan: TransferPlan,
    spec: DecoderSpec,
    targets: dict,
    truths: dict,
    config: FitConfig,
) -> dict:
    """Fit the base UE from random init, then every chain entry from its
    predecessor's fitted weights, all with the same seed tensor and the same
    iteration count. Returns {ue_id: TransferResult}.

    `targets` maps UE id to PreprocessedTarget, `truths` to the ground-truth
    ChannelTensor used for the NMSE.
    """
    for ue_id in plan.ue_ids:
        if ue_id not in targets:
            raise KeyError(f"plan references UE {ue_id} with no target")

    results: dict = {}

    def run_one(ue_id, init_params):
        report = fit(spec, None, targets[ue_id], config, init=init_params)
        est = postprocess(
            forward(spec, report.params), targets[ue_id].snapshot_norms, targets[ue_id].scale
        )
        err = nmse(est, truths[ue_id]) if ue_id in truths else float("nan")
        return report, err

    report, err = run_one(plan.base, None)
    results[plan.base] = TransferResult(plan.base, None, report, err)
    for step in plan.chain:
        init = results[step.init_from].report.params if step.init_from is not None else None
        report, err = run_one(step.target, init)
        results[step.target] = TransferResult(step.target, step.init_from, report, err)
    return results


@dataclass
class WeightDistance:
    per_layer: list  # Frobenius distance of each convolution kernel
    total: float  # Frobenius distance over all kernels jointly


def weight_distance(a: ParamSet, b: ParamSet) -> WeightDistance:
    """Per-layer and total Frobenius distances between two fitted kernel sets.
    Batch-norm parameters are transferred during init but excluded here."""
    if len(a.kernels) != len(b.kernels) or any(
        wa.shape != wb.shape for wa, wb in zip(a.kernels, b.kernels)
    ):
        raise ValueError("parameter sets come from different specs")
    per_layer = [
        float(np.linalg.norm(np.asarray(wa, dtype=np.float64) - np.asarray(wb, dtype=np.float64)))
        for wa, wb in zip(a.kernels, b.kernels)
    ]
    return WeightDistance(per_layer=per_layer, total=float(np.sqrt(sum(d * d for d in per_layer))))


def plan_from_json(text: str) -> TransferPlan:
    doc = json.loads(text)
    chain = tuple(
        TransferStep(int(s["target"]), None if s.get("init_from") is None else int(s["init_from"]))
        for s in doc["chain"]
    )
    return TransferPlan(base=int(doc["base"]), chain=chain)


def plan_to_json(plan: TransferPlan) -> str:
    doc = {
        "base": plan.base,
        "chain": [{"target": s.target, "init_from": s.init_from} for s in plan.chain],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def load_plan(path) -> TransferPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return plan_from_json(fh.read())


def distances_to_csv(rows, path) -> None:
    """Rows of (layer index, distance, init kind) - the per-layer table behind
    the weight-distance comparison."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "distance", "init_kind"])
        for layer, dist, kind in rows:
            writer.writerow([layer, repr(float(dist)), kind])
