"""Small numpy classifiers with mini-batch momentum SGD.

Parameters live in one flat float64 vector so that aggregation rules can
treat every model alike. Layout: ``W1 (d, H), b1 (H), W2 (H, C), b2 (C)`` for
the MLP and ``W (d, C), b (C)`` for the linear model, all row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, TrainingFault
from .population import ClientDataset, ClientPopulation

Seed = int | Sequence[int]


@dataclass(frozen=True)
class Architecture:
    kind: str  # "linear" | "mlp"
    d: int
    C: int
    hidden: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown architecture {self.kind!r}", "arch")
        if self.d < 1 or self.C < 1:
            raise ConfigError("dimensions must be positive", "arch")
        if self.kind == "mlp" and self.hidden < 1:
            raise ConfigError("mlp needs hidden >= 1", "hidden")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "linear":
            return [(self.d, self.C), (self.C,)]
        return [(self.d, self.hidden), (self.hidden,), (self.hidden, self.C), (self.C,)]

    @property
    def num_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes)

    def unpack(self, w: np.ndarray) -> list[np.ndarray]:
        """Views into ``w``, one per tensor."""
        out, off = [], 0
        for s in self.shapes:
            size = math.prod(s)
            out.append(w[off : off + size].reshape(s))
            off += size
        return out


@dataclass(eq=False)
class ModelParams:
    w: np.ndarray
    arch: Architecture

    def __post_init__(self) -> None:
        if self.w.shape != (self.arch.num_params,):
            raise ConfigError(f"expected {self.arch.num_params} parameters, got {self.w.shape}", "params")

    def copy(self) -> ModelParams:
        return ModelParams(self.w.copy(), self.arch)


@dataclass(frozen=True)
class ModelDescriptor:
    flops_per_input: float
    num_params: float


@dataclass(frozen=True)
class LocalTrainReport:
    params: ModelParams
    num_local_updates: int
    samples_processed: int


# Forward FLOPs per input and parameter counts of common ResNet depths; lets toy
# runs carry realistic cost magnitudes.
PRESETS: dict[str, ModelDescriptor] = {
    "resnet10": ModelDescriptor(12.5e6, 79.7e3),
    "resnet18": ModelDescriptor(26.8e6, 177.2e3),
    "resnet26": ModelDescriptor(41.1e6, 274.6e3),
    "resnet34": ModelDescriptor(60.1e6, 515.6e3),
}


def descriptor(arch: Architecture | str) -> ModelDescriptor:
    if isinstance(arch, str):
        try:
            return PRESETS[arch]
        except KeyError:
            raise ConfigError(f"unknown preset {arch!r}; known: {sorted(PRESETS)}", "preset") from None
    weights = sum(math.prod(s) for s in arch.shapes if len(s) == 2)
    return ModelDescriptor(flops_per_input=float(2 * weights), num_params=float(arch.num_params))


def init_model(seed: Seed, arch: Architecture) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    w = np.zeros(arch.num_params)
    for view in arch.unpack(w):
        if view.ndim == 2:
            limit = math.sqrt(6.0 / (view.shape[0] + view.shape[1]))
            view[...] = rng.uniform(-limit, limit, size=view.shape)
    return ModelParams(w, arch)


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d(loss)/d(logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    rows = np.arange(len(y))
    loss = float(np.mean(np.log(s[:, 0]) - z[rows, y]))
    dlogits = ez / s
    dlogits[rows, y] -= 1.0
    dlogits /= len(y)
    return loss, dlogits


def loss_and_grad(w: np.ndarray, arch: Architecture, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    grad = np.empty_like(w)
    gviews = arch.unpack(grad)
    if arch.kind == "linear":
        W, b = arch.unpack(w)
        loss, dl = _softmax_xent(x @ W + b, y)
        np.dot(x.T, dl, out=gviews[0])
        gviews[1][...] = dl.sum(axis=0)
        return loss, grad
    W1, b1, W2, b2 = arch.unpack(w)
    pre = x @ W1 + b1
    h = np.maximum(pre, 0.0)
    loss, dl = _softmax_xent(h @ W2 + b2, y)
    np.dot(h.T, dl, out=gviews[2])
    gviews[3][...] = dl.sum(axis=0)
    dh = dl @ W2.T
    dh *= pre > 0
    np.dot(x.T, dh, out=gviews[0])
    gviews[1][...] = dh.sum(axis=0)
    return loss, grad


def loss(w: np.ndarray, arch: Architecture, x: np.ndarray, y: np.ndarray) -> float:
    return _softmax_xent(logits(w, arch, x), y)[0]


def logits(w: np.ndarray, arch: Architecture, x: np.ndarray) -> np.ndarray:
    if arch.kind == "linear":
        W, b = arch.unpack(w)
        return x @ W + b
    W1, b1, W2, b2 = arch.unpack(w)
    return np.maximum(x @ W1 + b1, 0.0) @ W2 + b2


def samples_for(E: float, n_k: int, batch_size: int) -> int:
    """Points processed for ``E`` passes over ``n_k`` points (half-up rounding)."""
    return max(int(math.floor(E * n_k + 0.5)), min(batch_size, n_k), 1)


def _sgd_step_fn(arch: Architecture, w: np.ndarray, grad: np.ndarray):
    """Build a closure computing the batch gradient into ``grad`` (views hoisted)."""
    gv = arch.unpack(grad)
    if arch.kind == "linear":
        W, b = arch.unpack(w)

        def step(xb: np.ndarray, yb: np.ndarray) -> None:
            _, dl = _softmax_xent(xb @ W + b, yb)
            np.dot(xb.T, dl, out=gv[0])
            np.sum(dl, axis=0, out=gv[1])

        return step

    W1, b1, W2, b2 = arch.unpack(w)

    def step(xb: np.ndarray, yb: np.ndarray) -> None:
        pre = xb @ W1
        pre += b1
        h = np.maximum(pre, 0.0)
        z = h @ W2
        z += b2
        _, dl = _softmax_xent(z, yb)
        np.dot(h.T, dl, out=gv[2])
        np.sum(dl, axis=0, out=gv[3])
        dh = dl @ W2.T
        dh *= pre > 0
        np.dot(xb.T, dh, out=gv[0])
        np.sum(dh, axis=0, out=gv[1])

    return step


def local_train(
    params: ModelParams,
    data: ClientDataset,
    E: float,
    batch_size: int,
    lr: float,
    momentum: float = 0.9,
    seed: Seed = 0,
    reference: bool = False,
) -> LocalTrainReport:
    """Run ``ceil(samples / B)`` momentum-SGD steps on a copy of ``params``.

    Samples are consumed from back-to-back seeded permutations of the local
    data, so E=0.5 sees a random half and E=2 sees every point twice.
    The momentum buffer starts at zero on every call. ``reference=True`` uses
    the plain numpy loop instead of the compiled one.
    """
    n_k = data.n_k
    if n_k == 0:
        raise ConfigError("client has no data", "data")
    if batch_size < 1:
        raise ConfigError("must be >= 1", "batch_size")
    if not E > 0:
        raise ConfigError("must be > 0", "E")

    total = samples_for(E, n_k, batch_size)
    rng = np.random.default_rng(seed)
    passes = -(-total // n_k)
    order = np.concatenate([rng.permutation(n_k) for _ in range(passes)])[:total]

    w = params.w.copy()
    xs = np.ascontiguousarray(data.x[order], dtype=np.float64)
    ys = np.ascontiguousarray(data.y[order], dtype=np.int64)
    run = _sgd_numpy if reference else _sgd_compiled
    steps = run(params.arch, w, xs, ys, batch_size, float(lr), float(momentum))
    # A non-finite gradient at any step leaves w non-finite from then on.
    if not np.isfinite(w).all():
        raise TrainingFault("non-finite loss or gradient", client_id=data.client_id)
    return LocalTrainReport(ModelParams(w, params.arch), steps, total)


def _sgd_compiled(arch, w, xs, ys, batch_size, lr, momentum) -> int:
    from . import _kernels

    if arch.kind == "linear":
        return int(_kernels.sgd_linear(w, xs, ys, batch_size, lr, momentum, arch.d, arch.C))
    return int(_kernels.sgd_mlp(w, xs, ys, batch_size, lr, momentum, arch.d, arch.hidden, arch.C))


def _sgd_numpy(arch, w, xs, ys, batch_size, lr, momentum) -> int:
    """Vectorized reference loop; slow for tiny batches but easy to audit."""
    grad = np.empty_like(w)
    buf = np.zeros_like(w)
    step = _sgd_step_fn(arch, w, grad)
    steps = 0
    for start in range(0, len(ys), batch_size):
        step(xs[start : start + batch_size], ys[start : start + batch_size])
        buf *= momentum
        buf += grad
        w -= lr * buf
        steps += 1
    return steps


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(params.w, params.arch, x), axis=1)


def evaluate(params: ModelParams, test: ClientPopulation) -> float:
    x, y = test.stacked()
    if len(y) == 0:
        raise ConfigError("test population is empty", "test")
    return float(np.mean(predict(params, x) == y))
