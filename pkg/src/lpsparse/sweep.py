"""The p-grid experiment: calibrate, attack, measure, normalize, pick the optimal p."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import MEASURES, AttackConfig, evaluate_attack
from .calibration import CalibrationResult, calibrate_epsilon

log = logging.getLogger(__name__)

# measures entering the max-min; l0_frac is reported but excluded (lower = sparser)
OPTIMALITY_MEASURES = ("gini", "hoyer", "t_gauss", "t_lowpass", "t_taylor")
SPARSITY_MEASURES = ("gini", "hoyer")
SMOOTHNESS_MEASURES = ("t_gauss", "t_lowpass", "t_taylor")
TIE_TOL = 1e-12


def default_grid() -> list[float]:
    """1.0, 1.01, then 1.05 to 2.0 in steps of 0.05."""
    return [1.0, 1.01] + [round(1.0 + 0.05 * k, 2) for k in range(1, 21)]


def normalize_curve(raw) -> np.ndarray:
    """Min-max to [0, 1]; a constant curve maps to all ones. NaNs pass through."""
    raw = np.asarray(raw, dtype=np.float64)
    finite = np.isfinite(raw)
    if raw.size == 0 or not finite.any():
        raise ValueError("cannot normalize a curve without finite values")
    lo, hi = raw[finite].min(), raw[finite].max()
    if hi == lo:
        return np.where(finite, 1.0, np.nan)
    return (raw - lo) / (hi - lo)


@dataclass
class MeasureCurve:
    name: str
    grid: list[float]
    raw: np.ndarray
    normalized: np.ndarray


def beta_opt_and_set(curves, grid, tol: float = TIE_TOL) -> tuple[float, list[float]]:
    """Largest threshold every curve clears at a common p, and the p values doing so.

    ``curves`` is a sequence of normalized curves on ``grid``; NaN points
    (flagged grid points) never qualify.
    """
    M = np.atleast_2d(np.asarray(curves, dtype=np.float64))
    if M.shape[1] != len(grid):
        raise ValueError("every curve must be evaluated on the grid")
    worst = np.where(np.isnan(M).any(axis=0), -np.inf, np.min(M, axis=0))
    if not np.isfinite(worst).any():
        raise ValueError("no grid point has all measures defined")
    beta = float(worst.max())
    chosen = [float(p) for p, v in zip(grid, worst) if v >= beta - tol]
    return beta, chosen


@dataclass
class GridPoint:
    p: float
    epsilon: float
    clean_accuracy: float
    adv_accuracy: float
    success_rate: float
    means: dict[str, float]
    undefined_sparsity: int
    flagged: bool = False
    calibration: CalibrationResult | None = None
    attack: str = ""


@dataclass
class SweepResult:
    model_id: str
    dataset_id: str
    points: list[GridPoint]
    curves: dict[str, MeasureCurve]
    beta_opt: float
    optimal_p_set: list[float]
    per_measure_argmax: dict[str, list[float]] = field(default_factory=dict)

    @property
    def grid(self) -> list[float]:
        return [pt.p for pt in self.points]


def assemble(points: list[GridPoint], model_id: str = "", dataset_id: str = "",
             measures=MEASURES, optimality=OPTIMALITY_MEASURES) -> SweepResult:
    points = sorted(points, key=lambda pt: pt.p)
    grid = [pt.p for pt in points]
    ok = np.array([not pt.flagged for pt in points])
    curves = {}
    for m in measures:
        raw = np.array([pt.means.get(m, np.nan) for pt in points], dtype=np.float64)
        masked = np.where(ok, raw, np.nan)
        curves[m] = MeasureCurve(m, grid, raw, normalize_curve(masked))
    chosen = [m for m in optimality if m in curves]
    beta, opt = beta_opt_and_set([curves[m].normalized for m in chosen], grid)
    argmax = {}
    for m, c in curves.items():
        v = np.where(np.isnan(c.normalized), -np.inf, c.normalized)
        argmax[m] = [g for g, x in zip(grid, v) if x >= v.max() - TIE_TOL]
    return SweepResult(model_id, dataset_id, points, curves, beta, opt, argmax)


def run_sweep(model, dataset, grid=None, template: AttackConfig | None = None,
              calibration: dict[float, float] | None = None, calib_size: int = 200, seed: int = 0,
              measures=MEASURES, model_id: str = "", dataset_id: str = "", pixel_threshold: float = 0.0,
              keep_deltas: bool = False, on_point=None) -> SweepResult:
    """Calibrate epsilon_p (unless ``calibration`` gives it), attack the whole split, measure.

    p = 1 runs the l1 baseline; p > 1 runs Frank-Wolfe. Calibration uses a
    seeded subsample of ``calib_size`` examples. Bracket failures are kept as
    flagged points and left out of normalization. ``on_point(point, eval)``
    is called after each grid point.
    """
    grid = default_grid() if grid is None else sorted(float(p) for p in grid)
    if not grid or any(not 1.0 <= p <= 2.0 for p in grid):
        raise ValueError("grid must be a non-empty subset of [1, 2]")
    template = template or AttackConfig(p=2.0, epsilon=0.0, seed=seed)
    calib_set = dataset.subsample(calib_size, seed)
    points = []
    for p in grid:
        cfg = replace(template, p=p)
        cal = None
        flagged = False
        if calibration is not None and round(p, 6) in calibration:
            eps = calibration[round(p, 6)]
        else:
            cal = calibrate_epsilon(model, calib_set, p, cfg)
            eps, flagged = cal.epsilon, cal.bracket_failure
        res = evaluate_attack(model, dataset, replace(cfg, epsilon=eps), measures=measures,
                              pixel_threshold=pixel_threshold, keep_deltas=keep_deltas)
        pt = GridPoint(p, eps, res.clean_accuracy, res.adv_accuracy, res.success_rate, res.means,
                       res.undefined_sparsity, flagged, cal, cfg.name)
        log.info("p=%.2f eps=%.5g adv_acc=%.3f%s", p, eps, res.adv_accuracy, " (flagged)" if flagged else "")
        if on_point is not None:
            on_point(pt, res)
        points.append(pt)
    return assemble(points, model_id, dataset_id, measures)


def representative_p(optimal_set) -> float:
    """Midpoint of a multi-valued optimal set."""
    s = sorted(optimal_set)
    return 0.5 * (s[0] + s[-1])


@dataclass
class GroupSummary:
    group: str
    mean: float
    std: float
    points: list[float]


def aggregate(results: list[SweepResult], group_by: str = "model") -> list[GroupSummary]:
    """Mean and (population) std of the representative optimal p per model or dataset."""
    if not results:
        raise ValueError("nothing to aggregate")
    if group_by not in ("model", "dataset"):
        raise ValueError("group_by must be 'model' or 'dataset'")
    groups: dict[str, list[float]] = {}
    for r in results:
        key = r.model_id if group_by == "model" else r.dataset_id
        groups.setdefault(key, []).append(representative_p(r.optimal_p_set))
    out = []
    for key in sorted(groups):
        pts = groups[key]
        out.append(GroupSummary(key, float(np.mean(pts)), float(np.std(pts)), pts))
    return out
