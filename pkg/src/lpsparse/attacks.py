"""Untargeted, box-respecting lp attacks.

``FW-lp`` is classic Frank-Wolfe with step 2 / (t + 2) around the exact lp x box
oracle; it is not a replica of AFW's adaptive schedule. ``l1-PGD`` is fixed-step
projected ascent onto the l1 ball x box and stands in for l1-APGD.
Both keep the iterate with the highest loss seen so far, starting with delta = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Perturbation
from .errors import InvalidConfigError, NonFiniteGradientError
from .geometry import lmo_lp_box_batch, project_l1_box_batch
from . import smoothness, sparsity


@dataclass(frozen=True)
class AttackConfig:
    p: float
    epsilon: float
    iterations: int = 100
    step_rule: str = "classic-fw"
    restarts: int = 1
    seed: int = 0
    fixed_step: float = 0.1

    def validate(self) -> None:
        if not 1.0 <= self.p <= 2.0:
            raise InvalidConfigError(f"p must lie in [1, 2], got {self.p}")
        if self.epsilon < 0:
            raise InvalidConfigError("epsilon must be >= 0")
        if self.iterations < 1 or self.restarts < 1:
            raise InvalidConfigError("iterations and restarts must be >= 1")
        if self.step_rule not in ("classic-fw", "fixed"):
            raise InvalidConfigError(f"unknown step rule {self.step_rule!r}")

    @property
    def name(self) -> str:
        return "l1-PGD" if self.p == 1.0 else "FW-lp"


@dataclass
class AttackResult:
    perturbation: Perturbation
    success: bool
    final_loss: float
    loss_trace: np.ndarray = field(repr=False)

    @property
    def best_trace(self) -> np.ndarray:
        return np.maximum.accumulate(self.loss_trace)


@dataclass
class BatchAttack:
    deltas: np.ndarray  # (B, H, W, C)
    losses: np.ndarray  # best loss per example
    clean_losses: np.ndarray
    traces: np.ndarray  # (B, iterations), loss of each new iterate
    success: np.ndarray  # prediction at x + delta differs from the label


def _check_grad(g):
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("model returned a non-finite input gradient; attack aborted")


def _random_start(X, eps, p, seed, restart, ids):
    """Random feasible point: a random oracle vertex shrunk by U(0, 1).

    Each row draws from its own stream keyed by (seed, restart, example id), so
    results do not depend on how examples are batched.
    """
    rngs = [np.random.default_rng([seed, restart, int(i)]) for i in ids]
    w = np.stack([r.normal(size=X.shape[1]) for r in rngs])
    shrink = np.array([r.uniform() for r in rngs])
    if p > 1:
        s, _ = lmo_lp_box_batch(w, X, eps, p)
    else:
        s = project_l1_box_batch(w, X, eps)
    return s * shrink[:, None]


def attack_batch(model, X, y, config: AttackConfig, ids=None) -> BatchAttack:
    """Attack every row of ``X`` (B, H, W, C) under a shared (p, epsilon).

    p > 1 uses Frank-Wolfe; p = 1 uses l1 projected ascent. ``ids`` are the
    example indices used to key restart randomness (default 0..B-1).
    """
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    B = len(X)
    shape = X.shape
    Xf = X.reshape(B, -1)
    eps = float(config.epsilon)
    p = float(config.p)
    T = config.iterations
    ids = np.arange(B) if ids is None else np.asarray(ids)

    clean_loss, _ = model.loss_and_input_grad(X, y)
    best_delta = np.zeros_like(Xf)
    best_loss = clean_loss.copy()
    traces = np.empty((B, T))

    for r in range(config.restarts):
        delta = np.zeros_like(Xf) if r == 0 else _random_start(Xf, eps, p, config.seed, r, ids)
        loss, g = model.loss_and_input_grad((Xf + delta).reshape(shape), y)
        if r > 0:
            better = loss > best_loss
            best_loss = np.where(better, loss, best_loss)
            best_delta[better] = delta[better]
        for t in range(T):
            g = g.reshape(B, -1)
            _check_grad(g)
            if p > 1:
                s, _ = lmo_lp_box_batch(g, Xf, eps, p)
                eta = 2.0 / (t + 2.0) if config.step_rule == "classic-fw" else config.fixed_step
                delta = delta + eta * (s - delta)
            else:
                norms = np.linalg.norm(g, axis=1, keepdims=True)
                direction = np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)
                step = 2.0 * eps / T
                delta = project_l1_box_batch(delta + step * direction, Xf, eps)
            # x + delta can drift outside [0, 1] by one ulp through the convex combination
            delta = np.clip(Xf + delta, 0.0, 1.0) - Xf
            loss, g = model.loss_and_input_grad((Xf + delta).reshape(shape), y)
            if r == 0:
                traces[:, t] = loss
            better = loss > best_loss
            best_loss = np.where(better, loss, best_loss)
            best_delta[better] = delta[better]

    deltas = best_delta.reshape(shape)
    pred = model.predict_labels(X + deltas)
    return BatchAttack(deltas, best_loss, clean_loss, traces, pred != y)


def _single(model, x, y, config: AttackConfig) -> AttackResult:
    x = np.asarray(x, dtype=np.float64)
    res = attack_batch(model, x[None], np.array([y]), config)
    pert = Perturbation(res.deltas[0], config.p, config.epsilon)
    return AttackResult(pert, bool(res.success[0]), float(res.losses[0]), res.traces[0])


def afw_attack(model, x, y: int, config: AttackConfig) -> AttackResult:
    """Frank-Wolfe lp attack (p > 1) on a single H x W x C image."""
    if not config.p > 1:
        raise InvalidConfigError("afw_attack needs p > 1; use l1_attack for p = 1")
    return _single(model, x, y, config)


def l1_attack(model, x, y: int, config: AttackConfig) -> AttackResult:
    """Projected l1 ascent; the step moves 2 eps / iterations along the l2-normalized gradient."""
    if config.p != 1.0:
        raise InvalidConfigError("l1_attack needs p = 1")
    return _single(model, x, y, config)


def training_attacker(iterations: int = 10):
    """Callable ``(model, x, y, p, eps) -> x_adv`` used by adversarial training.

    Sampled p below 1.01 is raised to 1.01 (the Frank-Wolfe oracle is unstable
    closer to 1).
    """

    def attack(model, x, y, p, eps):
        cfg = AttackConfig(p=max(p, 1.01), epsilon=eps, iterations=iterations)
        res = attack_batch(model, x[None], np.array([y]), cfg)
        return np.clip(x + res.deltas[0], 0.0, 1.0)

    return attack


MEASURES = ("gini", "hoyer", "l0_frac", "t_gauss", "t_lowpass", "t_taylor")


def perturbation_measures(deltas, pixel_threshold: float = 0.0, which=MEASURES) -> dict[str, np.ndarray]:
    """Per-example measures of a (B, H, W, C) stack; NaN marks undefined sparsity."""
    out = {}
    if "gini" in which:
        out["gini"] = sparsity.gini_batch(deltas)
    if "hoyer" in which:
        out["hoyer"] = sparsity.hoyer_batch(deltas)
    if "l0_frac" in which:
        out["l0_frac"] = sparsity.l0_fraction_batch(deltas, pixel_threshold)
    if "t_gauss" in which:
        out["t_gauss"] = smoothness.smoothness_tc_batch(deltas, "gaussian")
    if "t_lowpass" in which:
        out["t_lowpass"] = smoothness.smoothness_tc_batch(deltas, "lowpass")
    if "t_taylor" in which:
        out["t_taylor"] = smoothness.smoothness_taylor_batch(deltas)
    return out


@dataclass
class EvalResult:
    clean_accuracy: float
    adv_accuracy: float
    success_rate: float
    means: dict[str, float]
    undefined_sparsity: int
    per_example: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    deltas: np.ndarray | None = field(repr=False, default=None)
    clean_correct: np.ndarray | None = field(repr=False, default=None)
    adv_correct: np.ndarray | None = field(repr=False, default=None)


def evaluate_attack(model, dataset, config: AttackConfig, measures=MEASURES, batch_size: int = 256,
                    pixel_threshold: float = 0.0, keep_deltas: bool = False) -> EvalResult:
    """Attack every example and aggregate.

    ``success_rate`` is the share of clean-correct examples the attack flips.
    Measure means skip undefined (all-zero) sparsity scores; their count is
    reported as ``undefined_sparsity``.
    """
    if len(dataset) == 0:
        raise InvalidConfigError("cannot evaluate on an empty dataset")
    clean_ok, adv_ok, chunks, deltas = [], [], [], []
    for s in range(0, len(dataset), batch_size):
        X = dataset.images[s : s + batch_size].astype(np.float64)
        y = dataset.labels[s : s + batch_size]
        res = attack_batch(model, X, y, config, ids=np.arange(s, s + len(X)))
        clean_ok.append(model.predict_labels(X) == y)
        adv_ok.append(~res.success)
        if measures:
            chunks.append(perturbation_measures(res.deltas, pixel_threshold, measures))
        if keep_deltas:
            deltas.append(res.deltas)
    clean_ok = np.concatenate(clean_ok)
    adv_ok = np.concatenate(adv_ok)
    per_example = {m: np.concatenate([c[m] for c in chunks]) for m in measures} if measures else {}
    means, undefined = {}, 0
    for m, v in per_example.items():
        ok = np.isfinite(v)
        if m in ("gini", "hoyer"):
            undefined = max(undefined, int(np.sum(~ok)))
        means[m] = float(v[ok].mean()) if ok.any() else float("nan")
    n_clean = int(clean_ok.sum())
    success = float(np.sum(clean_ok & ~adv_ok) / n_clean) if n_clean else 0.0
    return EvalResult(
        clean_accuracy=float(clean_ok.mean()),
        adv_accuracy=float(adv_ok.mean()),
        success_rate=success,
        means=means,
        undefined_sparsity=undefined,
        per_example=per_example,
        deltas=np.concatenate(deltas) if keep_deltas else None,
        clean_correct=clean_ok,
        adv_correct=adv_ok,
    )
