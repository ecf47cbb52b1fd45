"""Deep ConvNet for raw multichannel EEG, written directly in numpy.

Architecture (four conv-pool blocks, then a dense classifier)::

    block 1: temporal conv (25 x kernel 10) -> spatial conv over all electrodes
             -> batch norm -> ELU -> max-pool 3 / stride 2
    block k: dropout -> temporal conv (50/100/200 x kernel 10) -> batch norm
             -> ELU -> max-pool 3 / stride 2          (k = 2, 3, 4)
    dense:   flatten -> linear -> softmax

The temporal and spatial convolutions of block 1 are linear, so the forward
pass applies their composition as one (filters x electrodes x kernel)
convolution and the backward pass splits the gradient back onto both factors.
Gradients are exact through batch norm and pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .signal import TrialSet
from .synth import stratified_split

__all__ = [
    "ConvNetConfig",
    "ConvNetModel",
    "TrainConfig",
    "TrainResult",
    "layer_lengths",
    "min_input_length",
    "build_model",
    "forward",
    "presoftmax",
    "loss_and_grad",
    "make_dropout_masks",
    "recalibrate_batchnorm",
    "train",
    "predict",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
N_BLOCKS = 4


@dataclass(frozen=True)
class ConvNetConfig:
    n_channels: int
    n_samples: int
    n_classes: int = 2
    n_filters: tuple[int, ...] = (25, 50, 100, 200)
    kernel_length: int = 10
    pool_length: int = 3
    pool_stride: int = 2
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_filters", tuple(int(f) for f in self.n_filters))
        if len(self.n_filters) != N_BLOCKS or min(self.n_filters) < 1:
            raise InvalidInputError(f"need {N_BLOCKS} positive filter counts")
        if self.n_channels < 1 or self.n_classes < 2:
            raise InvalidInputError("need >= 1 channel and >= 2 classes")
        if self.kernel_length < 1 or self.pool_length < 1:
            raise InvalidInputError("kernel and pool lengths must be positive")
        if self.pool_stride != 2:
            raise InvalidInputError("pool stride is fixed at 2")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError("dropout probability must lie in [0, 1)")


def _block_lengths(cfg: ConvNetConfig, n_samples: int) -> list[tuple[int, int]]:
    out = []
    length = n_samples
    for _ in range(N_BLOCKS):
        conv = length - cfg.kernel_length + 1
        pool = (conv - cfg.pool_length) // cfg.pool_stride + 1 if conv >= cfg.pool_length else 0
        out.append((conv, pool))
        length = pool
    return out


def layer_lengths(cfg: ConvNetConfig) -> list[tuple[int, int]]:
    """Temporal length after (conv, pool) of each block."""
    return _block_lengths(cfg, cfg.n_samples)


def min_input_length(cfg: ConvNetConfig) -> int:
    n = 1
    while _block_lengths(cfg, n)[-1][1] < 1:
        n += 1
    return n


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # re-estimate batch-norm statistics without dropout after every epoch
    recalibrate_bn: bool = True

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise InvalidInputError("validation fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidInputError("batch size, epochs and patience must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be positive")


class ConvNetModel:
    """Parameters, batch-norm running statistics and a train/eval mode flag."""

    def __init__(self, cfg: ConvNetConfig, params: dict, buffers: dict, mode: str = "eval"):
        self.cfg = cfg
        self.params = params
        self.buffers = buffers
        self.mode = mode

    @property
    def dtype(self):
        return self.params["dense.weight"].dtype

    @property
    def lengths(self) -> list[tuple[int, int]]:
        return layer_lengths(self.cfg)

    def copy(self) -> "ConvNetModel":
        return ConvNetModel(
            self.cfg,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.mode,
        )

    def astype(self, dtype) -> "ConvNetModel":
        return ConvNetModel(
            self.cfg,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.mode,
        )

    def check_finite(self) -> None:
        for name, arr in {**self.params, **self.buffers}.items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in {name}")


def build_model(cfg: ConvNetConfig, dtype=np.float32) -> ConvNetModel:
    """Seeded He-uniform initialization; raises if the input is too short."""
    lengths = layer_lengths(cfg)
    if lengths[-1][1] < 1:
        raise InvalidInputError(
            f"input of {cfg.n_samples} samples is too short for the receptive field; "
            f"need at least {min_input_length(cfg)} samples"
        )
    rng = np.random.default_rng(cfg.seed)
    f1, f2, f3, f4 = cfg.n_filters
    K = cfg.kernel_length

    def he(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params = {
        "conv_time.weight": he((f1, K), K),
        "conv_spat.weight": he((f1, f1, cfg.n_channels), f1 * cfg.n_channels),
    }
    prev = f1
    for i, nf in enumerate((f2, f3, f4), start=2):
        params[f"conv{i}.weight"] = he((nf, prev, K), prev * K)
        prev = nf
    n_flat = f4 * lengths[-1][1]
    params["dense.weight"] = he((cfg.n_classes, n_flat), n_flat)
    params["dense.bias"] = np.zeros(cfg.n_classes, dtype=dtype)
    buffers = {}
    for i, nf in enumerate(cfg.n_filters, start=1):
        params[f"bn{i}.gamma"] = np.ones(nf, dtype=dtype)
        params[f"bn{i}.beta"] = np.zeros(nf, dtype=dtype)
        buffers[f"bn{i}.running_mean"] = np.zeros(nf, dtype=dtype)
        buffers[f"bn{i}.running_var"] = np.ones(nf, dtype=dtype)
    return ConvNetModel(cfg, params, buffers, mode="eval")


# ---------------------------------------------------------------------------
# layer primitives


def _conv1d(x, w):
    """Valid 1-D cross-correlation: x (b, cin, L), w (cout, cin, K) -> (b, cout, L-K+1)."""
    b, cin, L = x.shape
    cout, _, K = w.shape
    lout = L - K + 1
    cols = sliding_window_view(x, K, axis=2).transpose(0, 2, 1, 3).reshape(b * lout, cin * K)
    y = cols @ w.reshape(cout, cin * K).T
    return y.reshape(b, lout, cout).transpose(0, 2, 1), cols


def _conv1d_backward(dy, cols, w, x_shape, need_dx=True):
    b, cin, L = x_shape
    cout, _, K = w.shape
    lout = L - K + 1
    dy_mat = dy.transpose(0, 2, 1).reshape(b * lout, cout)
    dw = (dy_mat.T @ cols).reshape(w.shape)
    if not need_dx:
        return None, dw
    dcols = (dy_mat @ w.reshape(cout, cin * K)).reshape(b, lout, cin, K)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for k in range(K):
        dx[:, :, k : k + lout] += dcols[:, :, :, k].transpose(0, 2, 1)
    return dx, dw


def _bn_train(x, gamma, beta):
    mean = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y, (xhat, inv_std), mean, var


def _bn_eval(x, gamma, beta, running_mean, running_var):
    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    scale = gamma * inv_std
    shift = beta - running_mean * scale
    return x * scale[None, :, None] + shift[None, :, None], ("eval", x, running_mean, inv_std)


def _bn_backward(dy, cache, gamma):
    if len(cache) == 4:
        # eval cache: running statistics are constants, a per-channel affine map
        _, x, running_mean, inv_std = cache
        xhat = (x - running_mean[None, :, None]) * inv_std[None, :, None]
        dgamma = (dy * xhat).sum(axis=(0, 2))
        dbeta = dy.sum(axis=(0, 2))
        return dy * (gamma * inv_std)[None, :, None], dgamma, dbeta
    xhat, inv_std = cache
    n = dy.shape[0] * dy.shape[2]
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    dx = (inv_std[None, :, None] / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 2))[None, :, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
    )
    return dx, dgamma, dbeta


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def _maxpool(x, size, stride):
    win = sliding_window_view(x, size, axis=2)[:, :, ::stride, :]
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dy, idx, size, stride, in_len):
    b, c, lp = dy.shape
    dx = np.zeros((b, c, in_len), dtype=dy.dtype)
    span = stride * (lp - 1) + 1
    for j in range(size):
        dx[:, :, j : j + span : stride] += np.where(idx == j, dy, 0)
    return dx


# ---------------------------------------------------------------------------
# forward / backward


def _combined_block1_kernel(params):
    # (f, g, c) x (g, k) -> (f, c, k)
    return np.einsum("fgc,gk->fck", params["conv_spat.weight"], params["conv_time.weight"])


def make_dropout_masks(model: ConvNetModel, batch: int, rng) -> dict:
    """Inverted-dropout masks for the inputs of blocks 2-4."""
    cfg = model.cfg
    lengths = layer_lengths(cfg)
    p = cfg.dropout
    masks = {}
    for i in range(2, N_BLOCKS + 1):
        shape = (batch, cfg.n_filters[i - 2], lengths[i - 2][1])
        if p == 0:
            masks[i] = np.ones(shape, dtype=model.dtype)
        else:
            keep = rng.random(shape) >= p
            masks[i] = (keep / (1.0 - p)).astype(model.dtype)
    return masks


def _run(model, x, mode, masks, start=1, h=None, keep_cache=True):
    """Run blocks ``start..4`` and the dense layer.

    With ``start > 1`` the input ``h`` to block ``start`` is supplied directly.
    Returns (logits, caches, batch_stats, block_inputs).
    """
    cfg = model.cfg
    P = model.params
    train_mode = mode == "train"
    caches = {}
    stats = {}
    inputs = {}
    if start == 1:
        h = x
    for i in range(start, N_BLOCKS + 1):
        inputs[i] = h
        if i == 1:
            w = _combined_block1_kernel(P)
            z, cols = _conv1d(h, w)
        else:
            if train_mode:
                h = h * masks[i]
            z, cols = _conv1d(h, P[f"conv{i}.weight"])
        conv_in_shape = h.shape
        if train_mode:
            a, bn_cache, mean, var = _bn_train(z, P[f"bn{i}.gamma"], P[f"bn{i}.beta"])
            stats[i] = (mean, var, z.shape[0] * z.shape[2])
        else:
            a, bn_cache = _bn_eval(
                z,
                P[f"bn{i}.gamma"],
                P[f"bn{i}.beta"],
                model.buffers[f"bn{i}.running_mean"],
                model.buffers[f"bn{i}.running_var"],
            )
        e = _elu(a)
        pooled, idx = _maxpool(e, cfg.pool_length, cfg.pool_stride)
        if keep_cache:
            caches[i] = dict(cols=cols, conv_in_shape=conv_in_shape, bn=bn_cache, e=e, a=a,
                             idx=idx, elu_len=e.shape[2])
        h = pooled
    flat = h.reshape(h.shape[0], -1)
    logits = flat @ P["dense.weight"].T + P["dense.bias"]
    if keep_cache:
        caches["dense"] = dict(flat=flat, shape=h.shape)
    return logits, caches, stats, inputs


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _cross_entropy(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(labels)), labels].mean()


def _backward(model, caches, dlogits, masks, need_input_grad=False):
    cfg = model.cfg
    P = model.params
    grads = {}
    dense = caches["dense"]
    grads["dense.weight"] = dlogits.T @ dense["flat"]
    grads["dense.bias"] = dlogits.sum(axis=0)
    dh = (dlogits @ P["dense.weight"]).reshape(dense["shape"])
    dx = None
    for i in range(N_BLOCKS, 0, -1):
        c = caches[i]
        de = _maxpool_backward(dh, c["idx"], cfg.pool_length, cfg.pool_stride, c["elu_len"])
        # ELU'(a) = 1 for a > 0, exp(a) = e + 1 otherwise
        da = de * np.where(c["a"] > 0, 1.0, c["e"] + 1.0).astype(de.dtype)
        dz, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = _bn_backward(da, c["bn"], P[f"bn{i}.gamma"])
        if i == 1:
            w = _combined_block1_kernel(P)
            dx, dw = _conv1d_backward(dz, c["cols"], w, c["conv_in_shape"], need_dx=need_input_grad)
            grads["conv_spat.weight"] = np.einsum("fck,gk->fgc", dw, P["conv_time.weight"])
            grads["conv_time.weight"] = np.einsum("fck,fgc->gk", dw, P["conv_spat.weight"])
        else:
            dhi, grads[f"conv{i}.weight"] = _conv1d_backward(
                dz, c["cols"], P[f"conv{i}.weight"], c["conv_in_shape"]
            )
            dh = dhi * masks[i]
    return grads, dx


def _check_batch(model, x):
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (model.cfg.n_channels, model.cfg.n_samples):
        raise InvalidInputError(
            f"expected batch of shape (b, {model.cfg.n_channels}, {model.cfg.n_samples}), "
            f"got {x.shape}"
        )
    return x.astype(model.dtype, copy=False)


def _update_running_stats(model, stats):
    for i, (mean, var, n) in stats.items():
        unbiased = var * (n / max(n - 1, 1))
        rm = model.buffers[f"bn{i}.running_mean"]
        rv = model.buffers[f"bn{i}.running_var"]
        model.buffers[f"bn{i}.running_mean"] = (BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mean).astype(rm.dtype)
        model.buffers[f"bn{i}.running_var"] = (BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * unbiased).astype(rv.dtype)


def recalibrate_batchnorm(model: ConvNetModel, x, batch_size: int = 32) -> None:
    """Replace running statistics by dropout-free averages over ``x``.

    Each chunk is run in train mode with all dropout masks set to one; the
    running mean becomes the average chunk mean and the running variance the
    unbiased pooled variance. Statistics collected during training carry the
    variance inflation of inverted dropout, which eval mode does not have.
    """
    x = _check_batch(model, x)
    ones = {i: np.ones(1, dtype=model.dtype) for i in range(2, N_BLOCKS + 1)}
    sums = {}
    total = {}
    for s in range(0, x.shape[0], batch_size):
        chunk = x[s : s + batch_size]
        if chunk.shape[0] < 2:
            continue
        _, _, stats, _ = _run(model, chunk, "train", ones, keep_cache=False)
        for i, (mean, var, n) in stats.items():
            m1, m2 = sums.get(i, (0.0, 0.0))
            sums[i] = (m1 + n * mean.astype(np.float64), m2 + n * (var + mean.astype(np.float64) ** 2))
            total[i] = total.get(i, 0) + n
    if not sums:
        raise InvalidInputError("need at least 2 trials to re-estimate batch-norm statistics")
    for i, (m1, m2) in sums.items():
        n = total[i]
        mean = m1 / n
        var = np.maximum(m2 / n - mean**2, 0.0) * (n / max(n - 1, 1))
        dtype = model.buffers[f"bn{i}.running_mean"].dtype
        model.buffers[f"bn{i}.running_mean"] = mean.astype(dtype)
        model.buffers[f"bn{i}.running_var"] = var.astype(dtype)


def forward(model: ConvNetModel, batch, mode: str | None = None, rng=None,
            update_stats: bool = False):
    """Pre-softmax scores and softmax probabilities, each (b, n_classes).

    ``mode="eval"`` uses running batch-norm statistics and no dropout, so the
    output is a pure function of (model, batch). ``mode="train"`` uses batch
    statistics and dropout drawn from ``rng``.
    """
    mode = mode or model.mode
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _check_batch(model, batch)
    masks = None
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng(model.cfg.seed)
        masks = make_dropout_masks(model, x.shape[0], rng)
    logits, _, stats, _ = _run(model, x, mode, masks, keep_cache=False)
    if mode == "train" and update_stats:
        _update_running_stats(model, stats)
    return logits, _softmax(logits)


def presoftmax(model: ConvNetModel, batch, batch_size: int = 64) -> np.ndarray:
    """Eval-mode pre-softmax scores, computed in chunks."""
    x = _check_batch(model, batch)
    out = np.empty((x.shape[0], model.cfg.n_classes), dtype=model.dtype)
    for s in range(0, x.shape[0], batch_size):
        out[s : s + batch_size] = _run(model, x[s : s + batch_size], "eval", None,
                                       keep_cache=False)[0]
    return out


def loss_and_grad(model: ConvNetModel, batch, labels, rng=None, dropout_masks=None,
                  input_grad: bool = False, mode: str = "train"):
    """Mean cross-entropy and its exact gradient for every parameter.

    Returns ``(loss, grads)`` or ``(loss, grads, dinput)`` if ``input_grad``.
    Running statistics are never updated here. In train mode pass
    ``dropout_masks`` (see :func:`make_dropout_masks`) to pin the dropout
    pattern; in eval mode the network is deterministic.
    """
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _check_batch(model, batch)
    y = np.asarray(labels)
    if y.shape != (x.shape[0],) or np.any(y < 0) or np.any(y >= model.cfg.n_classes):
        raise InvalidInputError(f"labels must be integers in [0, {model.cfg.n_classes})")
    y = y.astype(np.int64)
    masks = dropout_masks
    if mode == "eval":
        masks = {i: 1 for i in range(2, N_BLOCKS + 1)}
    elif masks is None:
        rng = rng if rng is not None else np.random.default_rng(model.cfg.seed)
        masks = make_dropout_masks(model, x.shape[0], rng)
    logits, caches, _, _ = _run(model, x, mode, masks)
    loss = _cross_entropy(logits, y)
    dlogits = _softmax(logits)
    dlogits[np.arange(len(y)), y] -= 1
    dlogits /= len(y)
    grads, dx = _backward(model, caches, dlogits.astype(model.dtype), masks, input_grad)
    if input_grad:
        return float(loss), grads, dx
    return float(loss), grads


def train_mode_loss(model: ConvNetModel, batch, labels, dropout_masks, start=1, h=None):
    """Loss of the train-mode network, optionally re-entering at block ``start``."""
    x = _check_batch(model, batch) if start == 1 else None
    logits, _, _, _ = _run(model, x, "train", dropout_masks, start=start, h=h, keep_cache=False)
    return float(_cross_entropy(logits, np.asarray(labels)))


def block_inputs(model: ConvNetModel, batch, dropout_masks) -> dict:
    """Train-mode input of every block (before that block's dropout)."""
    x = _check_batch(model, batch)
    return _run(model, x, "train", dropout_masks, keep_cache=False)[3]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ConvNetModel
    history: list = field(default_factory=list)
    best_epoch: int = 0


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            step = c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)
            params[name] -= step.astype(params[name].dtype)


def _accuracy_and_loss(model, x, y, batch_size=64):
    logits = presoftmax(model, x, batch_size)
    pred = logits.argmax(axis=1)
    return float((pred == y).mean()), float(_cross_entropy(logits.astype(np.float64), y))


def train(model: ConvNetModel, trials: TrialSet, cfg: TrainConfig | None = None,
          log=None) -> TrainResult:
    """Mini-batch Adam training with stratified validation split and early stopping.

    Improvement means higher validation accuracy, or equal accuracy with lower
    validation loss. The parameters of the best validation epoch are restored.
    """
    cfg = cfg or TrainConfig()
    trials.require_both_classes(1)
    model = model.copy()
    x_all = _check_batch(model, trials.data)
    y_all = trials.labels
    train_idx, val_idx = stratified_split(y_all, cfg.validation_fraction, cfg.seed)
    for part, name in ((train_idx, "training"), (val_idx, "validation")):
        counts = np.bincount(y_all[part], minlength=model.cfg.n_classes)
        if counts[:2].min() < 1:
            raise InvalidInputError(
                f"stratified split left a class absent from the {name} set (counts {counts.tolist()})"
            )
    x_tr, y_tr = x_all[train_idx], y_all[train_idx]
    x_val, y_val = x_all[val_idx], y_all[val_idx]

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = _Adam(model.params, cfg)
    history = []
    best = None
    best_key = None
    since_best = 0
    n = len(y_tr)
    for epoch in range(1, cfg.max_epochs + 1):
        model.mode = "train"
        order = rng.permutation(n)
        losses = []
        correct = 0
        seen = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            if len(idx) < 2:  # batch norm needs at least two trials
                continue
            xb, yb = x_tr[idx], y_tr[idx]
            masks = make_dropout_masks(model, len(idx), rng)
            logits, caches, stats, _ = _run(model, xb, "train", masks)
            loss = _cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            probs = _softmax(logits)
            dlogits = probs.copy()
            dlogits[np.arange(len(yb)), yb] -= 1
            dlogits /= len(yb)
            grads, _ = _backward(model, caches, dlogits.astype(model.dtype), masks)
            opt.step(model.params, grads)
            _update_running_stats(model, stats)
            losses.append(float(loss) * len(idx))
            correct += int((logits.argmax(axis=1) == yb).sum())
            seen += len(idx)
        if cfg.recalibrate_bn:
            recalibrate_batchnorm(model, x_tr, cfg.batch_size)
        model.mode = "eval"
        model.check_finite()
        val_acc, val_loss = _accuracy_and_loss(model, x_val, y_val)
        record = {
            "epoch": epoch,
            "train_loss": sum(losses) / max(seen, 1),
            "train_accuracy": correct / max(seen, 1),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
        }
        history.append(record)
        if log is not None:
            log(record)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best = (epoch, model.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    best_epoch, best_model = best
    best_model.mode = "eval"
    return TrainResult(model=best_model, history=history, best_epoch=best_epoch)


def predict(model: ConvNetModel, trials, batch_size: int = 64) -> np.ndarray:
    """Argmax of eval-mode scores; ties resolve to the lower class index."""
    data = trials.data if isinstance(trials, TrialSet) else trials
    return presoftmax(model, data, batch_size).argmax(axis=1)
