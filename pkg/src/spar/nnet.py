"""Small fully-connected ReLU networks trained with minibatch ADAM.

Only what the radial heads need: a fixed MLP topology, exact reverse-mode
gradients, an ADAM optimiser and a training loop with a held-out
validation split, best-epoch selection and learning-rate shrinking restarts
on non-finite losses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

# loss(raw_outputs (B, k), targets (B, ...)) -> (per-example loss (B,), dloss/draw (B, k))
LossFn = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_widths: tuple
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if len(self.hidden_widths) < 1:
            raise ValueError("at least one hidden layer is required")
        if min(self.hidden_widths) < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer widths must be positive")

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i + 1] * (s[i] + 1) for i in range(len(s) - 1))


@dataclass
class MlpParams:
    """Weights ``a[l]`` of shape (h_l, h_{l-1}) and biases ``b[l]`` of shape (h_l,)."""

    weights: list
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def zeros(cls, arch: MlpArchitecture) -> "MlpParams":
        s = arch.layer_sizes
        return cls(
            [np.zeros((s[i + 1], s[i])) for i in range(len(s) - 1)],
            [np.zeros(s[i + 1]) for i in range(len(s) - 1)],
        )


def init_params(arch: MlpArchitecture, seed=None) -> MlpParams:
    """He-normal weights (variance 2/fan-in), zero biases."""
    rng = np.random.default_rng(seed)
    s = arch.layer_sizes
    weights = [rng.standard_normal((s[i + 1], s[i])) * np.sqrt(2.0 / s[i]) for i in range(len(s) - 1)]
    biases = [np.zeros(s[i + 1]) for i in range(len(s) - 1)]
    return MlpParams(weights, biases)


def _forward_cache(params: MlpParams, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(params.weights) - 1
    for l, (a, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ a.T + b
        pre.append(z)
        h = z if l == last else np.maximum(z, 0.0)
        if l != last:
            acts.append(h)
    return h, (acts, pre)


def forward(params: MlpParams, w) -> np.ndarray:
    """Raw network output (before any output transform) for one input or rows."""
    w = np.asarray(w, dtype=float)
    if np.isnan(w).any():
        raise ValueError("input contains NaN")
    if w.shape[-1] != params.weights[0].shape[1]:
        raise ValueError("input length does not match the architecture")
    out, _ = _forward_cache(params, np.atleast_2d(w))
    return out[0] if w.ndim == 1 else out


def _backward_cache(params: MlpParams, cache, dout: np.ndarray) -> MlpParams:
    acts, pre = cache
    L = len(params.weights)
    gw = [None] * L
    gb = [None] * L
    delta = dout
    for l in range(L - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (pre[l - 1] > 0.0)
    return MlpParams(gw, gb)


def backward(params: MlpParams, w, dloss_dout) -> MlpParams:
    """Gradient of ``sum(dloss_dout * forward(params, w))`` w.r.t. every
    weight and bias; rows of ``w`` contribute additively."""
    W = np.atleast_2d(np.asarray(w, dtype=float))
    G = np.atleast_2d(np.asarray(dloss_dout, dtype=float))
    _, cache = _forward_cache(params, W)
    return _backward_cache(params, cache, G)


@dataclass
class AdamState:
    params: MlpParams
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def start(cls, params: MlpParams, **kw) -> "AdamState":
        z = [np.zeros_like(x) for x in params.arrays()]
        return cls(params, z, [x.copy() for x in z], **kw)

    def copy(self) -> "AdamState":
        return AdamState(
            self.params.copy(),
            [x.copy() for x in self.m],
            [x.copy() for x in self.v],
            self.t,
            self.beta1,
            self.beta2,
            self.eps,
        )


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(state: AdamState, grads: MlpParams, learning_rate: float, trainable=None) -> AdamState:
    """One bias-corrected ADAM update, in place; returns ``state``.

    ``trainable`` optionally flags which of ``params.arrays()`` may move.
    """
    garrs = grads.arrays()
    if not all(np.all(np.isfinite(g)) for g in garrs):
        raise NonFiniteGradient("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    flags = trainable if trainable is not None else [True] * len(garrs)
    for p, g, m, v, on in zip(state.params.arrays(), garrs, state.m, state.v, flags):
        if not on:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 1000
    validation_fraction: float = 0.2
    patience: int = 50
    restart_shrink: float = 0.5
    max_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if not 0.0 < self.restart_shrink < 1.0:
            raise ValueError("restart_shrink must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.learning_rate <= 0:
            raise ValueError("invalid training settings")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)  # entry 0 is the initial state
    best_epoch: int = 0
    restarts: list = field(default_factory=list)  # (epoch, batch, new learning rate)
    degraded: bool = False
    final_learning_rate: float = 0.0
    train_index: np.ndarray | None = None
    val_index: np.ndarray | None = None

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def split_indices(n: int, validation_fraction: float, rng):
    perm = rng.permutation(n)
    n_val = int(round(validation_fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mean_loss(params, loss: LossFn, X, Y) -> float:
    out, _ = _forward_cache(params, X)
    values, _ = loss(out, Y)
    return float(np.mean(values))


def train(
    inputs,
    targets,
    loss: LossFn,
    arch: MlpArchitecture,
    config: TrainConfig = TrainConfig(),
    init=None,
    trainable=None,
):
    """Fit an MLP by minibatch ADAM on the mean of ``loss``.

    The data are split once into training and validation parts. After every
    epoch the validation loss is recorded and the best parameters so far are
    kept; training stops after ``config.patience`` epochs without
    improvement. A non-finite batch loss or gradient rolls the optimiser
    back to the last iterate whose batch loss was finite and multiplies the
    learning rate by ``config.restart_shrink``.

    ``trainable`` freezes parameter arrays as in :func:`adam_step`.

    Returns the best-validation parameters and a :class:`TrainHistory`.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.asarray(targets, dtype=float)
    n = len(X)
    if n < 2:
        raise ValueError("training needs at least two examples")
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else init_params(arch, rng)
    tr, va = split_indices(n, config.validation_fraction, rng)

    out0, _ = _forward_cache(params, X)
    l0, _ = loss(out0, Y)
    if not np.all(np.isfinite(l0)):
        raise ValueError("loss is not finite at initialisation; re-initialise the network")

    hist = TrainHistory(train_index=tr, val_index=va)
    hist.val_loss.append(float(np.mean(l0[va])))
    hist.train_loss.append(float(np.mean(l0[tr])))
    best = params.copy()
    lr = config.learning_rate
    state = AdamState.start(params)
    snapshot = state.copy()
    stale = 0
    Xtr, Ytr = X[tr], Y[tr]
    Xva, Yva = X[va], Y[va]

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(tr))
        batch_losses = []
        for bi, s in enumerate(range(0, len(tr), config.batch_size)):
            sel = order[s : s + config.batch_size]
            out, cache = _forward_cache(state.params, Xtr[sel])
            values, dout = loss(out, Ytr[sel])
            bl = float(np.mean(values))
            grads = None
            if np.isfinite(bl):
                grads = _backward_cache(state.params, cache, dout / len(sel))
            if grads is None or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
                lr *= config.restart_shrink
                hist.restarts.append((epoch, bi, lr))
                state = snapshot.copy()
                log.debug("non-finite loss at epoch %d batch %d; lr -> %g", epoch, bi, lr)
                if len(hist.restarts) > config.max_restarts:
                    hist.degraded = True
                    break
                continue
            snapshot = state.copy()
            adam_step(state, grads, lr, trainable)
            batch_losses.append(bl)
        if hist.degraded:
            break
        vl = _mean_loss(state.params, loss, Xva, Yva)
        hist.train_loss.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))
        hist.val_loss.append(vl)
        if np.isfinite(vl) and vl < hist.val_loss[hist.best_epoch]:
            hist.best_epoch = epoch
            best = state.params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    hist.final_learning_rate = lr
    log.info(
        "trained %d epochs, best epoch %d, val loss %.6g, restarts %d",
        len(hist.val_loss) - 1,
        hist.best_epoch,
        hist.best_val_loss,
        len(hist.restarts),
    )
    return best, hist
