"""Force encoder: torque normalization, the MLP force network and its training.

The network maps one flattened torque frame (``J * 3`` values) through three
``affine -> LayerNorm -> GELU`` blocks of widths 128, 256, 256, then a linear
projection to the embedding width. A sequence embedding is the mean of its
frame embeddings. Gradients are derived by hand for this fixed architecture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .dynamics import TorqueSequence

HIDDEN_WIDTHS = (128, 256, 256)
DEFAULT_EMBED_DIM = 256
LAYERNORM_EPS = 1e-5
CHECKPOINT_VERSION = 1
# float32 rounding leaves the peak of a normalized sequence within ~2**-24 of 1
_UNIT_PEAK_TOL = 2.0**-22

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class EncodingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sequence-level preprocessing
# ---------------------------------------------------------------------------


def normalize_sequence(tau):
    """Scale a torque sequence so its largest per-joint magnitude is 1.

    The result is rounded onto the float32 grid. Dividing ``c * tau`` by its
    own maximum differs from ``tau / max`` by a few float64 ulps at most, and
    the rounding absorbs that, so positive rescaling of the input leaves the
    output unchanged. Input that already sits on the float32 grid with a peak
    within ``2**-22`` of 1 counts as normalized and is returned as is, which
    makes normalizing twice a no-op. All-zero input is returned unchanged.
    """
    ts = tau if isinstance(tau, TorqueSequence) else TorqueSequence(tau)
    x = ts.tau
    # hypot avoids the underflow of squaring tiny magnitudes
    peak = np.hypot(np.hypot(x[..., 0], x[..., 1]), x[..., 2]).max()
    if peak == 0.0:
        return TorqueSequence(x.copy(), ts.joint_ids)
    if abs(peak - 1.0) <= _UNIT_PEAK_TOL and np.array_equal(x.astype(np.float32), x):
        return TorqueSequence(x.copy(), ts.joint_ids)
    scaled = (x / peak).astype(np.float32).astype(np.float64)
    return TorqueSequence(scaled, ts.joint_ids)


def mask_joints(tau, joints):
    """Zero all three torque components of the given joints at every frame."""
    ts = tau if isinstance(tau, TorqueSequence) else TorqueSequence(tau)
    index = {jid: k for k, jid in enumerate(ts.joint_ids)}
    out = ts.tau.copy()
    for j in joints:
        if j not in index:
            raise EncodingError(f"unknown joint id {j}")
        out[:, index[j], :] = 0.0
    return TorqueSequence(out, ts.joint_ids)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class Block:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray
    gain: np.ndarray
    shift: np.ndarray


@dataclass
class ForceNetParams:
    blocks: list
    out_weight: np.ndarray  # (256, d)
    out_bias: np.ndarray
    eps: float = LAYERNORM_EPS

    def __post_init__(self):
        if not self.eps > 0:
            raise EncodingError("layer-norm epsilon must be positive")
        width = self.in_dim
        for k, b in enumerate(self.blocks):
            if b.weight.shape[0] != width:
                raise EncodingError(f"block {k}: expected input width {width}, got {b.weight.shape[0]}")
            width = b.weight.shape[1]
            for name in ("bias", "gain", "shift"):
                if getattr(b, name).shape != (width,):
                    raise EncodingError(f"block {k}: {name} must have shape ({width},)")
        if self.out_weight.shape[0] != width or self.out_bias.shape != (self.out_weight.shape[1],):
            raise EncodingError("output projection does not match the last hidden width")

    @property
    def in_dim(self):
        return self.blocks[0].weight.shape[0]

    @property
    def embed_dim(self):
        return self.out_weight.shape[1]

    def arrays(self):
        """Flat, ordered list of all parameter arrays (views, not copies)."""
        out = []
        for b in self.blocks:
            out += [b.weight, b.bias, b.gain, b.shift]
        return out + [self.out_weight, self.out_bias]

    def names(self):
        out = []
        for k in range(len(self.blocks)):
            out += [f"block{k}.weight", f"block{k}.bias", f"block{k}.gain", f"block{k}.shift"]
        return out + ["out.weight", "out.bias"]

    def copy(self):
        return ForceNetParams(
            [Block(b.weight.copy(), b.bias.copy(), b.gain.copy(), b.shift.copy()) for b in self.blocks],
            self.out_weight.copy(),
            self.out_bias.copy(),
            self.eps,
        )

    @classmethod
    def zeros(cls, in_dim, embed_dim=DEFAULT_EMBED_DIM, hidden=HIDDEN_WIDTHS):
        blocks, width = [], in_dim
        for h in hidden:
            blocks.append(Block(np.zeros((width, h)), np.zeros(h), np.zeros(h), np.zeros(h)))
            width = h
        return cls(blocks, np.zeros((width, embed_dim)), np.zeros(embed_dim))


def init_params(in_dim, embed_dim=DEFAULT_EMBED_DIM, seed=0, hidden=HIDDEN_WIDTHS):
    """Uniform(+-1/sqrt(fan_in)) affine weights, unit gain, zero shift."""
    rng = np.random.default_rng(seed)
    blocks, width = [], in_dim
    for h in hidden:
        bound = 1.0 / np.sqrt(width)
        blocks.append(
            Block(rng.uniform(-bound, bound, (width, h)), rng.uniform(-bound, bound, h), np.ones(h), np.zeros(h))
        )
        width = h
    bound = 1.0 / np.sqrt(width)
    return ForceNetParams(blocks, rng.uniform(-bound, bound, (width, embed_dim)), rng.uniform(-bound, bound, embed_dim))


def save_params(path, params, head=None):
    """Write a versioned .npz checkpoint; layer shapes go in a JSON header."""
    arrays = dict(zip(params.names(), params.arrays()))
    header = {
        "version": CHECKPOINT_VERSION,
        "eps": params.eps,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    if head is not None:
        arrays["head.weight"], arrays["head.bias"] = head
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_params(path):
    """Read a checkpoint written by :func:`save_params`; returns (params, head or None)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise EncodingError(f"unsupported checkpoint version {header.get('version')}")
        n_blocks = sum(1 for k in header["shapes"] if k.endswith(".gain"))
        blocks = [
            Block(*(np.array(data[f"block{k}.{n}"]) for n in ("weight", "bias", "gain", "shift")))
            for k in range(n_blocks)
        ]
        params = ForceNetParams(blocks, np.array(data["out.weight"]), np.array(data["out.bias"]), header["eps"])
        for name, arr in zip(params.names(), params.arrays()):
            if list(arr.shape) != header["shapes"][name]:
                raise EncodingError(f"checkpoint shape mismatch for {name}")
        head = None
        if "head.weight" in data:
            head = (np.array(data["head.weight"]), np.array(data["head.bias"]))
    return params, head


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def gelu(x):
    return x * ndtr(x)


def _gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _forward(params, x):
    """Batched forward pass, returning the output and a cache for backprop."""
    cache = []
    h = x
    for b in params.blocks:
        z = h @ b.weight + b.bias
        mu = z.mean(axis=-1, keepdims=True)
        zc = z - mu
        inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + params.eps)
        zhat = zc * inv_std
        y = b.gain * zhat + b.shift
        cache.append((h, zhat, inv_std, y))
        h = gelu(y)
    return h @ params.out_weight + params.out_bias, (cache, h)


def _as_batch(params, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise EncodingError(f"width mismatch: expected input width {params.in_dim}, got {x.shape}")
    return x2, single


def fn_forward(params, x):
    """Embed one flattened torque frame (or a batch of frames, one per row)."""
    x2, single = _as_batch(params, x)
    out, _ = _forward(params, x2)
    return out[0] if single else out


def fn_gradient(params, x, upstream):
    """Gradients of ``sum(upstream * fn_forward(params, x))``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a
    :class:`ForceNetParams` holding the gradient of every parameter (summed
    over the batch when ``x`` has several rows).
    """
    x2, single = _as_batch(params, x)
    g = np.asarray(upstream, dtype=float)
    g2 = g[None, :] if g.ndim == 1 else g
    if g2.shape != (x2.shape[0], params.embed_dim):
        raise EncodingError(f"shape mismatch: upstream gradient must be ({x2.shape[0]}, {params.embed_dim})")
    _, (cache, h_last) = _forward(params, x2)

    d_out_w = h_last.T @ g2
    d_out_b = g2.sum(axis=0)
    dh = g2 @ params.out_weight.T
    grads = []
    for b, (h_in, zhat, inv_std, y) in zip(reversed(params.blocks), reversed(cache)):
        dy = dh * _gelu_grad(y)
        d_gain = (dy * zhat).sum(axis=0)
        d_shift = dy.sum(axis=0)
        dzhat = dy * b.gain
        dz = inv_std * (
            dzhat - dzhat.mean(axis=-1, keepdims=True) - zhat * (dzhat * zhat).mean(axis=-1, keepdims=True)
        )
        grads.append(Block(h_in.T @ dz, dz.sum(axis=0), d_gain, d_shift))
        dh = dz @ b.weight.T
    grads.reverse()
    pg = ForceNetParams(grads, d_out_w, d_out_b, params.eps)
    return pg, (dh[0] if single else dh)


# ---------------------------------------------------------------------------
# sequence embeddings
# ---------------------------------------------------------------------------


@dataclass
class ForceEmbedding:
    vector: np.ndarray
    source: str = ""
    pooling: str = "mean"


def frame_matrix(tau):
    """Flatten a T x J x 3 torque sequence into a T x (J*3) matrix."""
    ts = tau if isinstance(tau, TorqueSequence) else TorqueSequence(tau)
    return ts.tau.reshape(ts.n_frames, -1)


def encode_sequence(params, tau, source=""):
    """Mean-pooled embedding of every frame of a torque sequence."""
    frames = fn_forward(params, frame_matrix(tau))
    return ForceEmbedding(frames.mean(axis=0), source=source, pooling="mean")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EncoderConfig:
    epochs: int = 30
    step_size: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    embed_dim: int = 64


@dataclass
class FitResult:
    params: ForceNetParams
    head_weight: np.ndarray
    head_bias: np.ndarray
    loss_trace: list = field(default_factory=list)
    train_accuracy: float = 0.0

    @property
    def final_loss(self):
        return self.loss_trace[-1]

    def embed(self, tau):
        return encode_sequence(self.params, tau).vector

    def predict_proba(self, taus):
        emb = np.stack([self.embed(t) for t in taus])
        return softmax(emb @ self.head_weight + self.head_bias)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _stack_frames(taus):
    mats = [frame_matrix(t) for t in taus]
    T = mats[0].shape[0]
    if any(m.shape != mats[0].shape for m in mats):
        raise EncodingError("all sequences in a batch must share T and J")
    return np.concatenate(mats), T


def _dataset_loss(params, head_w, head_b, frames, T, labels):
    emb = fn_forward(params, frames).reshape(len(labels), T, -1).mean(axis=1)
    p = softmax(emb @ head_w + head_b)
    loss = -np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300))
    return loss, p


class _Adam:
    def __init__(self, arrays, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit_encoder(sequences, labels, config=None):
    """Train the force network and a linear softmax head on labeled sequences.

    Uses Adam on mini-batches of whole sequences; frame embeddings are
    mean-pooled over time before the head. ``loss_trace`` holds the full-set
    cross-entropy after each epoch.
    """
    cfg = config or EncoderConfig()
    labels = np.asarray(labels, dtype=int)
    if len(sequences) != len(labels) or len(labels) == 0:
        raise EncodingError("need one label per sequence")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise EncodingError("degenerate dataset: need at least two classes")
    if classes.min() < 0:
        raise EncodingError("labels must be non-negative class indices")
    n_classes = int(classes.max()) + 1
    frames, T = _stack_frames(sequences)
    in_dim = frames.shape[1]
    n = len(labels)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(in_dim, cfg.embed_dim, seed=int(rng.integers(2**31)))
    bound = 1.0 / np.sqrt(cfg.embed_dim)
    head_w = rng.uniform(-bound, bound, (cfg.embed_dim, n_classes))
    head_b = rng.uniform(-bound, bound, n_classes)
    trainable = params.arrays() + [head_w, head_b]
    opt = _Adam(trainable, cfg.step_size)
    per_seq = frames.reshape(n, T, in_dim)

    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = per_seq[idx].reshape(-1, in_dim)
            femb = fn_forward(params, xb)
            emb = femb.reshape(len(idx), T, -1).mean(axis=1)
            p = softmax(emb @ head_w + head_b)
            dlogits = p.copy()
            dlogits[np.arange(len(idx)), labels[idx]] -= 1.0
            dlogits /= len(idx)
            d_head_w = emb.T @ dlogits
            d_head_b = dlogits.sum(axis=0)
            demb = dlogits @ head_w.T
            upstream = np.repeat(demb / T, T, axis=0)
            pg, _ = fn_gradient(params, xb, upstream)
            opt.step(trainable, pg.arrays() + [d_head_w, d_head_b])
        loss, _ = _dataset_loss(params, head_w, head_b, frames, T, labels)
        trace.append(float(loss))
    if not trace:
        loss, _ = _dataset_loss(params, head_w, head_b, frames, T, labels)
        trace.append(float(loss))
    _, p = _dataset_loss(params, head_w, head_b, frames, T, labels)
    acc = float(np.mean(p.argmax(axis=1) == labels))
    return FitResult(params, head_w, head_b, trace, acc)
