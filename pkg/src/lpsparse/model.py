"""Small numpy classifiers with hand-written backprop, Adam training,
mixed-p adversarial training and the LPMD checkpoint format.

LPMD layout (little-endian)::

    bytes 0-3   magic b"LPMD"
    byte  4     version (1)
    bytes 5-7   reserved, zero
    u32         length L of the architecture descriptor
    L bytes     UTF-8 JSON descriptor {"kind", "input_shape", "num_classes", ...}
    float32     parameter blobs in declaration order (shapes follow from the descriptor)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DatasetFormatError, DivergenceError, InvalidConfigError

log = logging.getLogger(__name__)

CKPT_MAGIC = b"LPMD"
CKPT_VERSION = 1


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example loss and d(loss)/d(logits) = softmax - onehot."""
    ls = log_softmax(logits)
    idx = np.arange(len(labels))
    loss = -ls[idx, labels]
    dlogits = np.exp(ls)
    dlogits[idx, labels] -= 1.0
    return loss, dlogits


class Model:
    """Common interface: ``logits``, ``loss_and_input_grad`` and the parameter list.

    Subclasses implement ``_forward(X) -> (logits, cache)`` and
    ``_backward(cache, dlogits) -> (dX, param_grads)`` on (B, H, W, C) batches.
    """

    kind = "base"
    param_names: tuple[str, ...] = ()

    def __init__(self, input_shape, num_classes: int, params: dict[str, np.ndarray]):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in self.param_names}

    # -- interface -------------------------------------------------------
    def logits(self, X) -> np.ndarray:
        X = self._batch(X)
        return self._forward(X)[0]

    def predict(self, image) -> np.ndarray:
        return self.logits(np.asarray(image)[None])[0]

    def predict_labels(self, X) -> np.ndarray:
        # argmax resolves ties to the lowest class index
        return np.argmax(self.logits(X), axis=1)

    def loss(self, X, labels) -> np.ndarray:
        return cross_entropy(self.logits(X), np.asarray(labels))[0]

    def loss_and_input_grad(self, X, labels) -> tuple[np.ndarray, np.ndarray]:
        """Per-example cross-entropy and its gradient w.r.t. each input."""
        X = self._batch(X)
        out, cache = self._forward(X)
        loss, dlogits = cross_entropy(out, np.asarray(labels))
        dX, _ = self._backward(cache, dlogits, need_params=False)
        return loss, dX

    def input_gradient(self, image, label: int) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        _, g = self.loss_and_input_grad(image[None], np.array([label]))
        return g[0]

    def loss_and_param_grads(self, X, labels) -> tuple[float, dict[str, np.ndarray]]:
        X = self._batch(X)
        out, cache = self._forward(X)
        loss, dlogits = cross_entropy(out, np.asarray(labels))
        _, grads = self._backward(cache, dlogits / len(loss), need_params=True)
        return float(loss.mean()), grads

    # -- helpers ---------------------------------------------------------
    def _batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.input_shape:
            raise ValueError(f"expected inputs of shape (B, {self.input_shape}), got {X.shape}")
        return X

    def descriptor(self) -> dict:
        return {"kind": self.kind, "input_shape": list(self.input_shape), "num_classes": self.num_classes}

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def copy(self) -> Model:
        return type(self).from_descriptor(self.descriptor(), {k: v.copy() for k, v in self.params.items()})

    @classmethod
    def from_descriptor(cls, desc: dict, params: dict) -> Model:
        raise NotImplementedError

    def _forward(self, X):
        raise NotImplementedError

    def _backward(self, cache, dlogits, need_params: bool):
        raise NotImplementedError


class MlpModel(Model):
    """flatten -> tanh hidden layers -> K logits."""

    kind = "mlp"

    def __init__(self, input_shape, num_classes, hidden=(64,), params=None, seed: int = 0):
        self.hidden = tuple(int(h) for h in hidden)
        dims = [int(np.prod(input_shape)), *self.hidden, int(num_classes)]
        self.param_names = tuple(n for i in range(len(dims) - 1) for n in (f"W{i}", f"b{i}"))
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
                params[f"W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
                params[f"b{i}"] = np.zeros(fan_out)
        super().__init__(input_shape, num_classes, params)

    def descriptor(self) -> dict:
        return {**super().descriptor(), "hidden": list(self.hidden)}

    @classmethod
    def from_descriptor(cls, desc, params):
        return cls(desc["input_shape"], desc["num_classes"], desc["hidden"], params=params)

    def _forward(self, X):
        a = X.reshape(len(X), -1)
        acts = [a]
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            a = np.tanh(z) if i < n_layers - 1 else z
            acts.append(a)
        return a, acts

    def _backward(self, acts, dout, need_params):
        grads = {}
        n_layers = len(self.hidden) + 1
        d = dout
        for i in reversed(range(n_layers)):
            if need_params:
                grads[f"W{i}"] = acts[i].T @ d
                grads[f"b{i}"] = d.sum(axis=0)
            d = d @ self.params[f"W{i}"].T
            if i > 0:
                d = d * (1.0 - acts[i] ** 2)
        return d.reshape((len(d), *self.input_shape)), grads


def _im2col3(X: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, H, W, C*9) patches of the zero-padded input."""
    P = np.pad(X, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(P, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    B, H, W = X.shape[:3]
    return win.reshape(B, H, W, -1)


def _col2im3(dcols: np.ndarray, C: int) -> np.ndarray:
    B, H, W, _ = dcols.shape
    d = dcols.reshape(B, H, W, C, 3, 3)
    P = np.zeros((B, H + 2, W + 2, C))
    for i in range(3):
        for j in range(3):
            P[:, i : i + H, j : j + W, :] += d[..., i, j]
    return P[:, 1:-1, 1:-1, :]


class ConvModel(Model):
    """conv3x3 -> tanh -> conv3x3 -> tanh -> 2x2 average pool -> linear."""

    kind = "conv"
    param_names = ("K0", "c0", "K1", "c1", "W", "b")

    def __init__(self, input_shape, num_classes, channels=(8, 8), params=None, seed: int = 0):
        H, W, C = (int(s) for s in input_shape)
        if H % 2 or W % 2:
            raise InvalidConfigError("conv model needs even H and W for 2x2 pooling")
        self.channels = tuple(int(c) for c in channels)
        c1, c2 = self.channels
        if params is None:
            rng = np.random.default_rng(seed)
            flat = (H // 2) * (W // 2) * c2
            params = {
                "K0": rng.normal(0.0, 1.0 / np.sqrt(9 * C), size=(9 * C, c1)),
                "c0": np.zeros(c1),
                "K1": rng.normal(0.0, 1.0 / np.sqrt(9 * c1), size=(9 * c1, c2)),
                "c1": np.zeros(c2),
                "W": rng.normal(0.0, 1.0 / np.sqrt(flat), size=(flat, int(num_classes))),
                "b": np.zeros(int(num_classes)),
            }
        super().__init__(input_shape, num_classes, params)

    def descriptor(self) -> dict:
        return {**super().descriptor(), "channels": list(self.channels)}

    @classmethod
    def from_descriptor(cls, desc, params):
        return cls(desc["input_shape"], desc["num_classes"], desc["channels"], params=params)

    def _forward(self, X):
        p = self.params
        B, H, W, _ = X.shape
        cols0 = _im2col3(X)
        h0 = np.tanh(cols0 @ p["K0"] + p["c0"])
        cols1 = _im2col3(h0)
        h1 = np.tanh(cols1 @ p["K1"] + p["c1"])
        pooled = h1.reshape(B, H // 2, 2, W // 2, 2, -1).mean(axis=(2, 4))
        flat = pooled.reshape(B, -1)
        return flat @ p["W"] + p["b"], (cols0, h0, cols1, h1, flat)

    def _backward(self, cache, dout, need_params):
        p = self.params
        cols0, h0, cols1, h1, flat = cache
        B, H, W, _ = h1.shape
        grads = {}
        if need_params:
            grads["W"] = flat.T @ dout
            grads["b"] = dout.sum(axis=0)
        dpool = (dout @ p["W"].T).reshape(B, H // 2, 1, W // 2, 1, -1) / 4.0
        dh1 = np.broadcast_to(dpool, (B, H // 2, 2, W // 2, 2, h1.shape[-1])).reshape(h1.shape)
        dz1 = dh1 * (1.0 - h1**2)
        if need_params:
            grads["K1"] = cols1.reshape(-1, cols1.shape[-1]).T @ dz1.reshape(-1, dz1.shape[-1])
            grads["c1"] = dz1.sum(axis=(0, 1, 2))
        dh0 = _col2im3(dz1 @ p["K1"].T, h0.shape[-1])
        dz0 = dh0 * (1.0 - h0**2)
        if need_params:
            grads["K0"] = cols0.reshape(-1, cols0.shape[-1]).T @ dz0.reshape(-1, dz0.shape[-1])
            grads["c0"] = dz0.sum(axis=(0, 1, 2))
        dX = _col2im3(dz0 @ p["K0"].T, self.input_shape[-1])
        return dX, grads


MODEL_KINDS = {"mlp": MlpModel, "conv": ConvModel}


def build_model(kind: str, input_shape, num_classes: int, seed: int = 0, **arch) -> Model:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise InvalidConfigError(f"unknown model kind {kind!r}") from None
    return cls(input_shape, num_classes, seed=seed, **arch)


def accuracy(model: Model, dataset, batch_size: int = 512) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class index)."""
    if len(dataset) == 0:
        return 0.0
    correct = 0
    for s in range(0, len(dataset), batch_size):
        pred = model.predict_labels(dataset.images[s : s + batch_size])
        correct += int(np.sum(pred == dataset.labels[s : s + batch_size]))
    return correct / len(dataset)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    model: str = "mlp"
    arch: dict = field(default_factory=dict)
    adversarial: bool = False
    adversarial_fraction: float = 0.75
    p_range: tuple[float, float] = (1.0, 2.0)
    # l2-equivalent budget for the n^(1/p - 1/2) heuristic
    eps0: float = 0.5
    attack_iterations: int = 10

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if not 0.0 <= self.adversarial_fraction <= 1.0:
            raise InvalidConfigError("adversarial_fraction must lie in [0, 1]")
        lo, hi = self.p_range
        if not 1.0 <= lo <= hi <= 2.0:
            raise InvalidConfigError("p_range must be a sub-interval of [1, 2]")


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    sampled_p: list[float] = field(default_factory=list)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)


def heuristic_budget(p: float, n: int, eps0: float) -> float:
    """eps0 * n^(1/p - 1/2): equal-volume-style rescaling of an l2 budget to lp."""
    return eps0 * n ** (1.0 / p - 0.5)


def budget_from_table(table: list[tuple[float, float]]) -> Callable[[float], float]:
    """Linear interpolation of a (p, epsilon) calibration table, flat outside its range."""
    pts = sorted(table)
    ps = np.array([p for p, _ in pts])
    es = np.array([e for _, e in pts])
    return lambda p: float(np.interp(p, ps, es))


def train(dataset, config: TrainConfig, model: Model | None = None, attacker=None,
          budget: Callable[[float], float] | None = None, history: TrainHistory | None = None) -> Model:
    """Mini-batch Adam on mean cross-entropy.

    With ``attacker`` set, ``floor(adversarial_fraction * B)`` randomly chosen
    examples of every batch are replaced by attacks, each under its own
    ``p ~ U(p_range)`` and budget ``budget(p)``. ``attacker(model, x, y, p, eps)``
    must return the adversarial input. The attack and the sampling draw from a
    child stream so ``adversarial_fraction = 0`` reproduces plain training.
    """
    config.validate()
    if len(dataset) == 0:
        raise InvalidConfigError("cannot train on an empty dataset")
    if model is None:
        model = build_model(config.model, dataset.shape, dataset.num_classes, seed=config.seed, **config.arch)
    else:
        model = model.copy()
    history = history if history is not None else TrainHistory()
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    adv_rng = np.random.default_rng(seeds[1])
    opt = Adam(model.params, config)
    n_in = int(np.prod(dataset.shape))
    if budget is None:
        budget = lambda p: heuristic_budget(p, n_in, config.eps0)  # noqa: E731

    N = len(dataset)
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(N)
        total = 0.0
        for s in range(0, N, config.batch_size):
            idx = order[s : s + config.batch_size]
            X = dataset.images[idx].astype(np.float64)
            y = dataset.labels[idx]
            n_adv = int(np.floor(config.adversarial_fraction * len(idx))) if attacker is not None else 0
            if n_adv:
                chosen = adv_rng.choice(len(idx), size=n_adv, replace=False)
                ps = adv_rng.uniform(*config.p_range, size=n_adv)
                history.sampled_p.extend(ps.tolist())
                for j, p in zip(chosen, ps):
                    X[j] = attacker(model, X[j], int(y[j]), float(p), budget(float(p)))
            loss, grads = model.loss_and_param_grads(X, y)
            if not np.isfinite(loss):
                raise DivergenceError(step, loss)
            opt.step(model.params, grads)
            total += loss * len(idx)
            step += 1
        history.epoch_losses.append(total / N)
        log.info("epoch %d loss %.4f", epoch + 1, total / N)
    return model


def adversarial_train(dataset, config: TrainConfig, attacker=None, model: Model | None = None,
                      budget: Callable[[float], float] | None = None,
                      history: TrainHistory | None = None) -> Model:
    """Mixed-p adversarial training with the built-in lp attack unless ``attacker`` is given."""
    if attacker is None:
        from .attacks import training_attacker

        attacker = training_attacker(config.attack_iterations)
    return train(dataset, replace(config, adversarial=True), model=model, attacker=attacker,
                 budget=budget, history=history)


def save_model(model: Model, path) -> None:
    desc = json.dumps(model.descriptor(), sort_keys=True).encode()
    buf = bytearray(struct.pack("<4sB3xI", CKPT_MAGIC, CKPT_VERSION, len(desc)))
    buf += desc
    for name in model.param_names:
        buf += np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DatasetFormatError("truncated-file", f"{path}: checkpoint header too short")
    magic, version, dlen = struct.unpack_from("<4sB3xI", raw, 0)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise DatasetFormatError("malformed-header", f"{path}: not an LPMD v{CKPT_VERSION} checkpoint")
    try:
        desc = json.loads(raw[12 : 12 + dlen].decode())
        cls = MODEL_KINDS[desc["kind"]]
        # throwaway instance, only used for parameter shapes
        template = cls.from_descriptor(desc, None)
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError("malformed-header", f"{path}: bad architecture descriptor ({exc})") from None
    offset = 12 + dlen
    params = {}
    for name in template.param_names:
        shape = template.params[name].shape
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise DatasetFormatError("truncated-file", f"{path}: parameter blob {name} truncated")
        params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 4 * count
    if offset != len(raw):
        raise DatasetFormatError("malformed-header", f"{path}: {len(raw) - offset} trailing bytes")
    return cls.from_descriptor(desc, params)
