"""Two-layer stateless LSTM with a dense softmax head, written against numpy.

Gate blocks inside each stacked weight matrix are ordered (input, forget,
output, candidate). Parameters live in a plain dict keyed ``lstm1.W``,
``lstm1.U``, ``lstm1.b``, ``lstm2.*``, ``dense.W``, ``dense.b``:

    lstmN.W   (4H, in_dim)   input weights
    lstmN.U   (4H, H)        recurrent weights
    lstmN.b   (4H,)
    dense.W   (n_outputs, hidden2)
    dense.b   (n_outputs,)

Both states start at zero for every window. Only the second layer's final
hidden state reaches the dense layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ordrec.errors import DataError, DivergenceError

PARAM_NAMES = ("lstm1.W", "lstm1.U", "lstm1.b", "lstm2.W", "lstm2.U", "lstm2.b", "dense.W", "dense.b")


@dataclass(frozen=True)
class ModelConfig:
    seq_len_in: int = 11
    feature_dim: int = 102
    hidden1: int = 600
    hidden2: int = 600
    n_outputs: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("seq_len_in", "feature_dim", "hidden1", "hidden2", "n_outputs"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h1, h2 = self.hidden1, self.hidden2
        return {
            "lstm1.W": (4 * h1, self.feature_dim),
            "lstm1.U": (4 * h1, h1),
            "lstm1.b": (4 * h1,),
            "lstm2.W": (4 * h2, h1),
            "lstm2.U": (4 * h2, h2),
            "lstm2.b": (4 * h2,),
            "dense.W": (self.n_outputs, h2),
            "dense.b": (self.n_outputs,),
        }


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform weights per gate block, forget bias 1, other biases 0."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".b"):
            b = np.zeros(shape, dtype=np.float64)
            if name.startswith("lstm"):
                h = shape[0] // 4
                b[h:2 * h] = 1.0
            params[name] = b.astype(dtype)
            continue
        if name.startswith("lstm"):
            fan_out, fan_in = shape[0] // 4, shape[1]
        else:
            fan_out, fan_in = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def zero_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in cfg.param_shapes().items()}


def check_params(params: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    for name, shape in cfg.param_shapes().items():
        if name not in params:
            raise DataError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise DataError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class LayerCache:
    x: np.ndarray
    gates: np.ndarray       # (B, T, 4H) post-activation i, f, o, g
    c: np.ndarray           # (B, T+1, H), c[:, 0] = 0
    tanh_c: np.ndarray      # (B, T, H)
    h: np.ndarray           # (B, T+1, H), h[:, 0] = 0


@dataclass
class ForwardCache:
    layer1: LayerCache
    layer2: LayerCache
    logits: np.ndarray
    probs: np.ndarray
    shapes: dict = field(default_factory=dict)
    single: bool = False


def _layer_forward(x, W, U, b) -> LayerCache:
    B, T, _ = x.shape
    H = U.shape[1]
    xw = x @ W.T + b
    gates = np.empty((B, T, 4 * H), dtype=x.dtype)
    c = np.zeros((B, T + 1, H), dtype=x.dtype)
    h = np.zeros((B, T + 1, H), dtype=x.dtype)
    tanh_c = np.empty((B, T, H), dtype=x.dtype)
    for t in range(T):
        z = xw[:, t] + h[:, t] @ U.T
        a = gates[:, t]
        a[:, :3 * H] = sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c[:, t + 1] = f * c[:, t] + i * g
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o * tanh_c[:, t]
    return LayerCache(x, gates, c, tanh_c, h)


def _layer_backward(cache: LayerCache, dh_seq, W, U):
    """Backprop through time for one layer.

    dh_seq is (B, T, H): loss gradient reaching each step's output from above.
    Returns (dW, dU, db, dx).
    """
    B, T, H = dh_seq.shape
    dz_all = np.empty((B, T, 4 * H), dtype=dh_seq.dtype)
    dh_next = np.zeros((B, H), dtype=dh_seq.dtype)
    dc_next = np.zeros((B, H), dtype=dh_seq.dtype)
    for t in reversed(range(T)):
        a = cache.gates[:, t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ U
    flat_dz = dz_all.reshape(B * T, 4 * H)
    dW = flat_dz.T @ cache.x.reshape(B * T, -1)
    dU = flat_dz.T @ cache.h[:, :T].reshape(B * T, H)
    db = flat_dz.sum(axis=0)
    dx = dz_all @ W
    return dW, dU, db, dx


def forward(params: dict[str, np.ndarray], x):
    """Run one window (T, F) or a batch (B, T, F).

    Returns (probs, cache); probs is (n_outputs,) for a single window and
    (B, n_outputs) for a batch.
    """
    dtype = params["dense.W"].dtype
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params["lstm1.W"].shape[1]:
        raise DataError(f"input shape {x.shape} does not match feature dim {params['lstm1.W'].shape[1]}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite input features")
    x = x.astype(dtype, copy=False)
    l1 = _layer_forward(x, params["lstm1.W"], params["lstm1.U"], params["lstm1.b"])
    l2 = _layer_forward(l1.h[:, 1:], params["lstm2.W"], params["lstm2.U"], params["lstm2.b"])
    logits = l2.h[:, -1] @ params["dense.W"].T + params["dense.b"]
    probs = softmax(logits)
    cache = ForwardCache(l1, l2, logits, probs, {k: v.shape for k, v in params.items()}, single)
    return (probs[0] if single else probs), cache


def loss(probs, label_index: int) -> float:
    """Categorical cross-entropy of a probability vector against a one-hot label."""
    p = float(np.asarray(probs, dtype=np.float64)[label_index])
    return -np.log(max(p, np.finfo(np.float64).tiny))


def cross_entropy(logits, labels) -> float:
    """Mean cross-entropy over a batch, computed from logits (log-sum-exp)."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    lp = log_softmax(logits.astype(np.float64))
    return float(-lp[np.arange(len(labels)), labels].mean())


def backward(params: dict[str, np.ndarray], cache: ForwardCache, labels) -> dict[str, np.ndarray]:
    """Gradients of the mean batch cross-entropy w.r.t. every parameter."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B = cache.probs.shape[0]
    if {k: v.shape for k, v in params.items()} != cache.shapes:
        raise DataError("cache was produced by parameters of a different shape")
    if len(labels) != B:
        raise DataError(f"{len(labels)} labels for a cached batch of {B}")
    n_out = cache.probs.shape[1]
    if labels.min() < 0 or labels.max() >= n_out:
        raise DataError("label index out of range")

    dlogits = cache.probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    h2_last = cache.layer2.h[:, -1]
    grads = {"dense.W": dlogits.T @ h2_last, "dense.b": dlogits.sum(axis=0)}

    H2 = h2_last.shape[1]
    T = cache.layer2.x.shape[1]
    dh2 = np.zeros((B, T, H2), dtype=dlogits.dtype)
    dh2[:, -1] = dlogits @ params["dense.W"]
    dW2, dU2, db2, dx2 = _layer_backward(cache.layer2, dh2, params["lstm2.W"], params["lstm2.U"])
    dW1, dU1, db1, _ = _layer_backward(cache.layer1, dx2, params["lstm1.W"], params["lstm1.U"])
    grads.update({
        "lstm1.W": dW1, "lstm1.U": dU1, "lstm1.b": db1,
        "lstm2.W": dW2, "lstm2.U": dU2, "lstm2.b": db2,
    })
    return {k: grads[k] for k in PARAM_NAMES}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns (params, state)."""
    for name, g in grads.items():
        if name not in params or params[name].shape != g.shape:
            raise DataError(f"gradient {name} does not match parameters")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient for {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr * np.sqrt(1.0 - b2 ** state.t) / (1.0 - b1 ** state.t)
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (step * m / (np.sqrt(v) + state.eps * np.sqrt(1.0 - b2 ** state.t))).astype(p.dtype)
    return params, state


def _relative_error(a, n) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def gradient_check(cfg: ModelConfig, seed: int = 0, eps: float = 1e-5, zero_recurrent: bool = False,
                   weight_scale: float = 0.5, dtype=np.longdouble) -> float:
    """Max relative error between backprop and central differences.

    Runs in the widest float type numpy offers (x87 extended on most x86
    builds) so difference roundoff stays far below the tolerance.

    A random window (with a zero-padded prefix) and label are drawn from
    `seed`; every parameter coordinate is perturbed.
    """
    rng = np.random.default_rng(seed)
    params = {name: rng.normal(0.0, weight_scale, size=shape).astype(dtype)
              for name, shape in cfg.param_shapes().items()}
    if zero_recurrent:
        params["lstm1.U"][:] = 0.0
        params["lstm2.U"][:] = 0.0
    x = rng.normal(0.0, 1.0, size=(cfg.seq_len_in, cfg.feature_dim)).astype(dtype)
    n_pad = int(rng.integers(0, cfg.seq_len_in))
    x[:n_pad] = 0.0
    label = int(rng.integers(0, cfg.n_outputs))

    def f():
        _, c = forward(params, x)
        return -log_softmax(c.logits[0])[label]

    _, cache = forward(params, x)
    grads = backward(params, cache, [label])
    worst = 0.0
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up = f()
            flat[k] = old - eps
            down = f()
            flat[k] = old
            numeric.reshape(-1)[k] = (up - down) / (2 * eps)
        worst = max(worst, _relative_error(grads[name], numeric))
    return worst
