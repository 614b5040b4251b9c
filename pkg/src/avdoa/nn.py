"""Feedforward networks for azimuth classification, built from scratch.

Everything runs in float64 numpy with hand-written analytic gradients so
training is deterministic and every layer can be checked against finite
differences.  Two fusion architectures share the same trunk (MLP3, three
Dense -> BatchNorm -> ReLU blocks followed by a sigmoid output layer over
360 one-degree azimuth classes):

  * concatenation: audio and visual features are concatenated directly
  * adaptive weighting: a small two-layer net predicts three softmax
    weights (audio, image-horizontal, image-vertical) per sample, scales
    the corresponding feature blocks, then feeds the trunk

plus an audio-only variant that feeds the trunk from GCC features alone.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    BatchTooSmall,
    EmptyDataset,
    NaNLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .geom import wrap_degrees

N_CLASSES = 360
GCC_DIM = 306       # 6 pairs x 51 lags
VIS_DIM = 102       # 2 axes x 51 grid points


# ---------------------------------------------------------------------------
# activations and loss
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return np.where(x > 0, dout, 0.0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dout, y):
    """Gradient through sigmoid given its output y."""
    return dout * y * (1.0 - y)


def softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout, s):
    """Gradient through row-wise softmax given its output s."""
    return s * (dout - (dout * s).sum(axis=1, keepdims=True))


def mse_loss(pred, target):
    """Mean over all elements of (pred - target)^2 and its gradient."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Dense:
    """Affine layer y = x W^T + b with Glorot-uniform init."""

    def __init__(self, in_dim, out_dim, rng):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeMismatch(
                f"dense expects (batch, {self.weight.shape[1]}), got {x.shape}"
            )
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dout):
        self.grad_weight = dout.T @ self._x
        self.grad_bias = dout.sum(axis=0)
        return dout @ self.weight


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    ``momentum`` is the fraction of the old running estimate kept per
    update.  Variances are biased (ddof=0) both in training and in the
    running estimate, so an eval pass with running stats equal to a batch's
    stats reproduces the training-mode output.  The default eps is tiny
    because everything runs in float64; it only guards exactly-constant
    features.
    """

    def __init__(self, dim, momentum=0.9, eps=1e-12):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.gamma.size:
            raise ShapeMismatch(f"batchnorm expects (batch, {self.gamma.size}), got {x.shape}")
        if train:
            if x.shape[0] < 2:
                raise BatchTooSmall("training-mode batch norm needs at least 2 samples")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
            self._inv_std = 1.0 / np.sqrt(var + self.eps)
            self._xhat = (x - mean) * self._inv_std
            return self.gamma * self._xhat + self.beta
        xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        batch = dout.shape[0]
        self.grad_gamma = (dout * self._xhat).sum(axis=0)
        self.grad_beta = dout.sum(axis=0)
        dxhat = dout * self.gamma
        return (self._inv_std / batch) * (
            batch * dxhat
            - dxhat.sum(axis=0)
            - self._xhat * (dxhat * self._xhat).sum(axis=0)
        )


class Adam:
    """Adam with bias correction; state (m, v, t) lives on the optimizer."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, params, grads):
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(self._m):
            raise ShapeMismatch("parameter list changed between steps")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# target encoding
# ---------------------------------------------------------------------------

def encode_target(azimuths_deg, sigma_deg=8.0, n_classes=N_CLASSES):
    """Soft 360-class label: Gaussian of circular distance, max over sources.

    Class i covers azimuth i - 180 degrees.  A source exactly on a grid
    value yields 1.0 there; distances wrap across +/-180.
    """
    grid = np.arange(n_classes, dtype=float) - 180.0
    target = np.zeros(n_classes)
    for az in azimuths_deg:
        if not -180.0 <= az < 180.0:
            raise ValueError(f"azimuth {az} outside [-180, 180)")
        dist = np.abs(wrap_degrees(grid - az))
        np.maximum(target, np.exp(-(dist**2) / sigma_deg**2), out=target)
    return target


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class Mlp3:
    """Dense -> BatchNorm -> ReLU blocks, then Dense -> sigmoid."""

    def __init__(self, in_dim, hidden_dims, out_dim, rng):
        dims = [in_dim, *hidden_dims]
        self.blocks = [
            (Dense(dims[i], dims[i + 1], rng), BatchNorm(dims[i + 1]))
            for i in range(len(hidden_dims))
        ]
        self.out = Dense(dims[-1], out_dim, rng)

    def forward(self, x, train):
        self._relu_in = []
        for dense, bn in self.blocks:
            x = bn.forward(dense.forward(x), train)
            self._relu_in.append(x)
            x = relu(x)
        self._y = sigmoid(self.out.forward(x))
        return self._y

    def backward(self, dy):
        dx = self.out.backward(sigmoid_backward(dy, self._y))
        for (dense, bn), pre in zip(reversed(self.blocks), reversed(self._relu_in)):
            dx = dense.backward(bn.backward(relu_backward(dx, pre)))
        return dx

    def parameters(self):
        out = []
        for dense, bn in self.blocks:
            out += [dense.weight, dense.bias, bn.gamma, bn.beta]
        out += [self.out.weight, self.out.bias]
        return out

    def gradients(self):
        out = []
        for dense, bn in self.blocks:
            out += [dense.grad_weight, dense.grad_bias, bn.grad_gamma, bn.grad_beta]
        out += [self.out.grad_weight, self.out.grad_bias]
        return out

    def bn_stats(self):
        out = []
        for _, bn in self.blocks:
            out += [bn.running_mean, bn.running_var]
        return out


class GccOnlyModel:
    """Audio-only trunk: GCC features straight into MLP3."""

    kind = "gcc_only"

    def __init__(self, hidden=(1000, 1000, 1000), gcc_dim=GCC_DIM, out_dim=N_CLASSES,
                 rng=None):
        rng = np.random.default_rng(rng)
        self.gcc_dim = gcc_dim
        self.vis_dim = 0
        self.hidden = tuple(hidden)
        self.out_dim = out_dim
        self.weight_net_hidden = 0
        self.core = Mlp3(gcc_dim, hidden, out_dim, rng)

    def forward(self, gcc, vis=None, train=False):
        if gcc.ndim != 2 or gcc.shape[1] != self.gcc_dim:
            raise ShapeMismatch(f"expected (batch, {self.gcc_dim}) GCC input, got {gcc.shape}")
        return self.core.forward(gcc, train)

    def backward(self, dy):
        return self.core.backward(dy)

    def parameters(self):
        return self.core.parameters()

    def gradients(self):
        return self.core.gradients()

    def bn_stats(self):
        return self.core.bn_stats()


class AvcModel:
    """Early fusion: concatenated audio and visual features into MLP3."""

    kind = "avc"

    def __init__(self, hidden=(1000, 1000, 1000), gcc_dim=GCC_DIM, vis_dim=VIS_DIM,
                 out_dim=N_CLASSES, rng=None):
        rng = np.random.default_rng(rng)
        self.gcc_dim = gcc_dim
        self.vis_dim = vis_dim
        self.hidden = tuple(hidden)
        self.out_dim = out_dim
        self.weight_net_hidden = 0
        self.core = Mlp3(gcc_dim + vis_dim, hidden, out_dim, rng)

    def _check(self, gcc, vis):
        if gcc.ndim != 2 or gcc.shape[1] != self.gcc_dim:
            raise ShapeMismatch(f"expected (batch, {self.gcc_dim}) GCC input, got {gcc.shape}")
        if vis is None or vis.ndim != 2 or vis.shape[1] != self.vis_dim:
            shape = None if vis is None else vis.shape
            raise ShapeMismatch(f"expected (batch, {self.vis_dim}) visual input, got {shape}")
        if vis.shape[0] != gcc.shape[0]:
            raise ShapeMismatch("audio and visual batches differ in size")

    def forward(self, gcc, vis, train=False):
        self._check(gcc, vis)
        return self.core.forward(np.concatenate([gcc, vis], axis=1), train)

    def backward(self, dy):
        return self.core.backward(dy)

    def parameters(self):
        return self.core.parameters()

    def gradients(self):
        return self.core.gradients()

    def bn_stats(self):
        return self.core.bn_stats()


class AvawModel:
    """Adaptive weighting: per-sample softmax weights scale the three
    feature blocks (audio, image-horizontal, image-vertical) before the
    shared trunk.  The latest weights are kept on ``last_weights``.
    """

    kind = "avaw"

    def __init__(self, hidden=(1000, 1000, 1000), weight_net_hidden=64,
                 gcc_dim=GCC_DIM, vis_dim=VIS_DIM, out_dim=N_CLASSES, rng=None):
        if vis_dim % 2:
            raise ValueError("visual dim must split into two equal axis blocks")
        rng = np.random.default_rng(rng)
        self.gcc_dim = gcc_dim
        self.vis_dim = vis_dim
        self.hidden = tuple(hidden)
        self.out_dim = out_dim
        self.weight_net_hidden = weight_net_hidden
        self.wn1 = Dense(gcc_dim + vis_dim, weight_net_hidden, rng)
        self.wn2 = Dense(weight_net_hidden, 3, rng)
        self.core = Mlp3(gcc_dim + vis_dim, hidden, out_dim, rng)
        self.last_weights = None

    _check = AvcModel._check

    def adaptive_weights(self, gcc, vis):
        """Softmax-normalized (audio, horizontal, vertical) weights, (B, 3)."""
        self._check(gcc, vis)
        z = np.concatenate([gcc, vis], axis=1)
        return softmax(self.wn2.forward(relu(self.wn1.forward(z))))

    def forward(self, gcc, vis, train=False):
        self._check(gcc, vis)
        half = self.vis_dim // 2
        z = np.concatenate([gcc, vis], axis=1)
        wn_pre = self.wn1.forward(z)
        logits = self.wn2.forward(relu(wn_pre))
        weights = softmax(logits)
        self._cache = (gcc, vis, wn_pre, weights)
        self.last_weights = weights
        scaled = np.concatenate(
            [
                gcc * weights[:, 0:1],
                vis[:, :half] * weights[:, 1:2],
                vis[:, half:] * weights[:, 2:3],
            ],
            axis=1,
        )
        return self.core.forward(scaled, train)

    def backward(self, dy):
        gcc, vis, wn_pre, weights = self._cache
        half = self.vis_dim // 2
        dscaled = self.core.backward(dy)
        d_audio = dscaled[:, :self.gcc_dim]
        d_u = dscaled[:, self.gcc_dim:self.gcc_dim + half]
        d_v = dscaled[:, self.gcc_dim + half:]
        dweights = np.stack(
            [
                (d_audio * gcc).sum(axis=1),
                (d_u * vis[:, :half]).sum(axis=1),
                (d_v * vis[:, half:]).sum(axis=1),
            ],
            axis=1,
        )
        dlogits = softmax_backward(dweights, weights)
        dh = relu_backward(self.wn2.backward(dlogits), wn_pre)
        self.wn1.backward(dh)

    def parameters(self):
        return [self.wn1.weight, self.wn1.bias, self.wn2.weight, self.wn2.bias] \
            + self.core.parameters()

    def gradients(self):
        return [self.wn1.grad_weight, self.wn1.grad_bias,
                self.wn2.grad_weight, self.wn2.grad_bias] + self.core.gradients()

    def bn_stats(self):
        return self.core.bn_stats()


_MODEL_CLASSES = {"gcc_only": GccOnlyModel, "avc": AvcModel, "avaw": AvawModel}


def build_model(kind, hidden=(1000, 1000, 1000), weight_net_hidden=64, seed=0):
    """Construct a model with seeded initialization (init rng = [seed, 0])."""
    if kind not in _MODEL_CLASSES:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng([seed, 0])
    if kind == "avaw":
        return AvawModel(hidden=hidden, weight_net_hidden=weight_net_hidden, rng=rng)
    return _MODEL_CLASSES[kind](hidden=hidden, rng=rng)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple = (1000, 1000, 1000)
    weight_net_hidden: int = 64
    target_sigma_deg: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ValueError("epochs >= 1, batch_size >= 2 and learning_rate > 0 required")


def train_model(model, gcc, vis, targets, config):
    """MSE training loop with seeded shuffling and Adam updates.

    Fully deterministic for a fixed config seed: shuffling uses rng
    [seed, 1] so it is independent of the model-init stream.  Raises
    NaNLoss the moment a loss or parameter stops being finite.  Returns
    the per-epoch mean batch loss.
    """
    n = len(gcc)
    if n < 2:
        raise EmptyDataset("training needs at least two samples")
    if len(targets) != n or (vis is not None and len(vis) != n):
        raise ShapeMismatch("feature and target row counts differ")
    adam = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 1])
    params = model.parameters()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue  # a stray final sample cannot form batch statistics
            batch_vis = None if vis is None else vis[idx]
            pred = model.forward(gcc[idx], batch_vis, train=True)
            loss, dy = mse_loss(pred, targets[idx])
            if not np.isfinite(loss):
                raise NaNLoss(f"non-finite loss at epoch {epoch}, step {len(losses)}")
            model.backward(dy)
            adam.step(params, model.gradients())
            for p in params:
                if not np.all(np.isfinite(p)):
                    raise NaNLoss(f"non-finite parameter after epoch {epoch} update")
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"DOAM"
_VERSION = 1
_ARCH_TAGS = {"avc": 0, "avaw": 1, "gcc_only": 2}
_TAG_ARCHS = {v: k for k, v in _ARCH_TAGS.items()}


def _pack_block_table(arrays):
    parts = [struct.pack("<H", len(arrays))]
    for arr in arrays:
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    return b"".join(parts)


def save_checkpoint(model, path):
    """Serialize architecture, parameters and batch-norm running stats.

    Layout: magic "DOAM", version u16, arch tag u8, dims header, shape
    tables, then little-endian f64 blocks (trainable parameters in
    declaration order, then running stats).  Byte-stable: save, load and
    save again produces an identical file.
    """
    params = model.parameters()
    stats = model.bn_stats()
    first_bn = model.core.blocks[0][1]
    header = [
        _MAGIC,
        struct.pack("<H", _VERSION),
        struct.pack("<B", _ARCH_TAGS[model.kind]),
        struct.pack("<III", model.gcc_dim, model.vis_dim, model.out_dim),
        struct.pack("<H", len(model.hidden)),
        struct.pack(f"<{len(model.hidden)}I", *model.hidden),
        struct.pack("<I", model.weight_net_hidden),
        struct.pack("<dd", first_bn.momentum, first_bn.eps),
        _pack_block_table(params),
        _pack_block_table(stats),
    ]
    blob = b"".join(header) + b"".join(
        np.ascontiguousarray(a).astype("<f8").tobytes() for a in [*params, *stats]
    )
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def block_table(self):
        shapes = []
        for _ in range(self.take("<H")):
            ndim = self.take("<B")
            shape = self.take(f"<{ndim}I")
            shapes.append(tuple(np.atleast_1d(shape)))
        return shapes

    def f64(self, shape):
        count = int(np.prod(shape))
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += count * 8
        return arr.reshape(shape).astype(np.float64)


def load_checkpoint(path, model=None):
    """Rebuild (or fill) a model from a checkpoint file.

    With ``model`` given, the file must match its architecture and shapes
    exactly (ShapeMismatch otherwise); without it a fresh model is built
    from the self-describing header.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    if data[:4] != _MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    reader.pos = 4
    version = reader.take("<H")
    if version != _VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_VERSION}")
    arch = reader.take("<B")
    if arch not in _TAG_ARCHS:
        raise VersionMismatch(f"{path}: unknown architecture tag {arch}")
    kind = _TAG_ARCHS[arch]
    gcc_dim, vis_dim, out_dim = reader.take("<III")
    n_hidden = reader.take("<H")
    hidden = tuple(np.atleast_1d(reader.take(f"<{n_hidden}I")))
    weight_net_hidden = reader.take("<I")
    bn_momentum, bn_eps = reader.take("<dd")
    param_shapes = reader.block_table()
    stat_shapes = reader.block_table()
    if model is None:
        if kind == "gcc_only":
            model = GccOnlyModel(hidden=hidden, gcc_dim=gcc_dim, out_dim=out_dim,
                                 rng=np.random.default_rng(0))
        elif kind == "avc":
            model = AvcModel(hidden=hidden, gcc_dim=gcc_dim, vis_dim=vis_dim,
                             out_dim=out_dim, rng=np.random.default_rng(0))
        else:
            model = AvawModel(hidden=hidden, weight_net_hidden=weight_net_hidden,
                              gcc_dim=gcc_dim, vis_dim=vis_dim, out_dim=out_dim,
                              rng=np.random.default_rng(0))
    elif model.kind != kind:
        raise ShapeMismatch(f"{path}: checkpoint is {kind!r}, model is {model.kind!r}")
    params = model.parameters()
    stats = model.bn_stats()
    if [p.shape for p in params] != param_shapes or [s.shape for s in stats] != stat_shapes:
        raise ShapeMismatch(f"{path}: parameter shapes do not match the model")
    for arr, shape in zip([*params, *stats], [*param_shapes, *stat_shapes]):
        arr[...] = reader.f64(shape)
    if reader.pos != len(data):
        raise ShapeMismatch(f"{path}: trailing bytes after parameter blocks")
    for _, bn in model.core.blocks:
        bn.momentum = bn_momentum
        bn.eps = bn_eps
    return model
