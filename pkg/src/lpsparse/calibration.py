"""Per-p attack budgets that bring accuracy under attack down to a third of clean accuracy."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, evaluate_attack
from .errors import CalibrationError
from .model import accuracy

log = logging.getLogger(__name__)

TOLERANCE = 0.02


@dataclass
class CalibrationResult:
    p: float
    epsilon: float
    achieved: float
    target: float
    clean_accuracy: float
    trace: list[tuple[float, float]] = field(default_factory=list)
    bracket_failure: bool = False
    floor: float = 0.0

    def to_entry(self) -> dict:
        return {"p": self.p, "epsilon": self.epsilon, "achieved": self.achieved, "target": self.target}


def initial_epsilon(p: float, n: int) -> float:
    return 1e-2 * n ** (1.0 / p)


def calibrate_epsilon(model, dataset, p: float, template: AttackConfig | None = None,
                      max_bisect: int = 20, rtol: float = 0.02, cap: float | None = None) -> CalibrationResult:
    """Smallest probed epsilon whose accuracy under attack is <= clean/3.

    Doubling from ``1e-2 * n^(1/p)`` brackets the target; bisection then shrinks
    the bracket until its relative width is below ``rtol`` (at most
    ``max_bisect`` probes). The upper endpoint is returned, so the target is met
    without degrading much further. Accuracy need not be monotone in epsilon;
    the trace records every probe. If the target is not reached by ``cap``
    (default: the lp diameter of the box, n^(1/p)), the result is flagged
    ``bracket_failure`` instead of raising.
    """
    clean = accuracy(model, dataset)
    if clean <= 0:
        raise CalibrationError("clean accuracy is 0; the one-third target is undefined")
    target = clean / 3.0
    n = int(np.prod(dataset.shape))
    template = template or AttackConfig(p=p, epsilon=0.0)
    cap = cap if cap is not None else n ** (1.0 / p)
    trace: list[tuple[float, float]] = []

    def probe(eps: float) -> float:
        acc = evaluate_attack(model, dataset, replace(template, p=p, epsilon=eps), measures=()).adv_accuracy
        trace.append((eps, acc))
        log.debug("p=%.2f eps=%.6g acc=%.4f target=%.4f", p, eps, acc, target)
        return acc

    floor = initial_epsilon(p, n)
    lo, hi = 0.0, floor
    acc_hi = probe(hi)
    while acc_hi > target:
        if hi >= cap:
            log.warning("p=%.2f: accuracy %.3f still above target %.3f at eps cap %.4g", p, acc_hi, target, hi)
            return CalibrationResult(p, hi, acc_hi, target, clean, trace, bracket_failure=True, floor=floor)
        lo, hi = hi, min(2.0 * hi, cap)
        acc_hi = probe(hi)

    if lo > 0:
        for _ in range(max_bisect):
            if (hi - lo) <= rtol * hi:
                break
            mid = 0.5 * (lo + hi)
            acc = probe(mid)
            if acc <= target:
                hi, acc_hi = mid, acc
            else:
                lo = mid
    return CalibrationResult(p, hi, acc_hi, target, clean, trace, floor=floor)


def save_calibration(results: list[CalibrationResult], path, model_id: str = "", dataset_id: str = "") -> None:
    doc = {
        "model_id": model_id,
        "dataset_id": dataset_id,
        "entries": [r.to_entry() for r in sorted(results, key=lambda r: r.p)],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def load_calibration(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "entries" not in doc:
        raise CalibrationError(f"{path}: not a calibration table")
    for e in doc["entries"]:
        if not {"p", "epsilon"} <= set(e):
            raise CalibrationError(f"{path}: entry missing p/epsilon: {e}")
    return doc


def calibration_table(doc: dict) -> dict[float, float]:
    return {round(float(e["p"]), 6): float(e["epsilon"]) for e in doc["entries"]}


def trace_as_dict(result: CalibrationResult) -> dict:
    d = asdict(result)
    d["trace"] = [list(t) for t in result.trace]
    return d
