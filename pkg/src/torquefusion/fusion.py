"""Fusion operators combining an appearance stream with force embeddings.

Feature maps are ``(c, h, w)`` arrays. Feature-level operators take the
appearance map ``F`` and a force-derived map ``P`` (usually produced by
:func:`project_embedding`) or a force-generated transform. Token fusion
concatenates per-modality token sequences for a sequence decoder, and
decision fusion mixes per-model class scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

OPERATORS = ("add", "concat", "mul", "gated", "bmm", "tokens", "decision")
FEATURE_OPERATORS = ("add", "concat", "mul", "gated", "bmm")
MODALITIES = ("vision", "text", "force", "kinematics", "other")


class FusionError(ValueError):
    pass


def _as_map(F, name="feature map"):
    F = np.asarray(F, dtype=float)
    if F.ndim != 3 or min(F.shape) < 1:
        raise FusionError(f"{name} must be a non-empty c x h x w array, got shape {F.shape}")
    return F


def _same_shape(F, P):
    F, P = _as_map(F), _as_map(P)
    if F.shape != P.shape:
        raise FusionError(f"shape mismatch: {F.shape} vs {P.shape}")
    return F, P


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    modality: str = "other"

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise FusionError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float).reshape(-1))


@dataclass(frozen=True)
class DecisionWeights:
    w_a: float = 0.5
    w_b: float = 0.5


def project_embedding(e, weight, bias=None, shape=None):
    """Affine projection ``weight @ e + bias``.

    With ``shape=(c, h, w)`` the projected length-``c`` vector is broadcast to
    every spatial site, giving a feature map.
    """
    e = np.asarray(getattr(e, "vector", e), dtype=float).reshape(-1)
    W = np.asarray(weight, dtype=float)
    if W.ndim != 2 or W.shape[1] != e.size:
        raise FusionError(f"shape mismatch: projection {W.shape} cannot act on length {e.size}")
    out = W @ e
    if bias is not None:
        out = out + np.asarray(bias, dtype=float)
    if shape is None:
        return out
    c, h, w = shape
    if out.size != c:
        raise FusionError(f"shape mismatch: projected width {out.size} != channel count {c}")
    return np.broadcast_to(out[:, None, None], (c, h, w)).copy()


def fuse_addition(F, P):
    F, P = _same_shape(F, P)
    return F + P


def fuse_elementwise(F, P):
    F, P = _same_shape(F, P)
    return F * P


def fuse_concat(F, P, weight, bias=None):
    """Channel concatenation followed by a 1x1 convolution (2c -> c)."""
    F, P = _as_map(F), _as_map(P)
    if F.shape[1:] != P.shape[1:]:
        raise FusionError(f"shape mismatch: spatial sizes {F.shape[1:]} vs {P.shape[1:]}")
    stacked = np.concatenate([F, P], axis=0)
    W = np.asarray(weight, dtype=float)
    if W.ndim != 2 or W.shape[1] != stacked.shape[0]:
        raise FusionError(f"shape mismatch: merge weight {W.shape} vs {stacked.shape[0]} input channels")
    out = np.einsum("oc,chw->ohw", W, stacked)
    if bias is not None:
        out = out + np.asarray(bias, dtype=float)[:, None, None]
    return out


def make_spatial_transform(e, weight, bias, width):
    """Generate a ``width x width`` matrix from an embedding by an affine map."""
    e = np.asarray(getattr(e, "vector", e), dtype=float).reshape(-1)
    W = np.asarray(weight, dtype=float)
    if W.shape != (width * width, e.size):
        raise FusionError(f"width mismatch: generator must be ({width * width}, {e.size}), got {W.shape}")
    g = W @ e
    if bias is not None:
        g = g + np.asarray(bias, dtype=float)
    return g.reshape(width, width)


def fuse_bmm(F, G):
    """Right-multiply every row of every channel by ``I + G``."""
    F = _as_map(F)
    G = np.asarray(G, dtype=float)
    w = F.shape[2]
    if G.shape != (w, w):
        raise FusionError(f"width mismatch: transform {G.shape} vs feature width {w}")
    return np.matmul(F, np.eye(w) + G)


def sigmoid(x):
    return expit(x)


def gate_value(F, e, weight, bias=0.0):
    """alpha = sigmoid(weight . [GAP(F); e] + bias)."""
    F = _as_map(F)
    e = np.asarray(getattr(e, "vector", e), dtype=float).reshape(-1)
    z = np.concatenate([F.mean(axis=(1, 2)), e])
    w = np.asarray(weight, dtype=float).reshape(-1)
    if w.size != z.size:
        raise FusionError(f"shape mismatch: gate expects width {w.size}, got c + d = {z.size}")
    return float(sigmoid(w @ z + bias))


def fuse_gated(F, e, weight, bias, P):
    """Convex blend ``alpha * F + (1 - alpha) * P`` with a learned scalar gate.

    The result is clipped into ``[min(F, P), max(F, P)]`` so rounding can never
    push it outside the segment between the two inputs.
    """
    F, P = _same_shape(F, P)
    alpha = gate_value(F, e, weight, bias)
    out = alpha * F + (1.0 - alpha) * P
    return np.clip(out, np.minimum(F, P), np.maximum(F, P))


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (L, d)
    tags: tuple

    def split(self):
        """Recover the per-modality token blocks (vision, text, force)."""
        out = []
        for tag in ("vision", "text", "force"):
            rows = [i for i, t in enumerate(self.tags) if t == tag]
            out.append(self.tokens[rows])
        return tuple(out)


def fuse_tokens(vis, text, force):
    """Concatenate projected vision, text and force tokens in that order."""
    blocks, tags = [], []
    for seq, tag in ((vis, "vision"), (text, "text"), (force, "force")):
        for tok in seq:
            v = np.asarray(getattr(tok, "vector", tok), dtype=float).reshape(-1)
            blocks.append(v)
            tags.append(tag)
    if not blocks:
        return TokenSequence(np.zeros((0, 0)), ())
    width = blocks[0].size
    if any(b.size != width for b in blocks):
        raise FusionError("width mismatch: all tokens must share one projected width")
    return TokenSequence(np.stack(blocks), tuple(tags))


def fuse_decision(p_a, p_b, weights=DecisionWeights()):
    """Weighted score fusion; returns ``(fused_scores, argmax)`` along the last axis."""
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    if p_a.shape != p_b.shape:
        raise FusionError(f"length mismatch: {p_a.shape} vs {p_b.shape}")
    fused = weights.w_a * p_a + weights.w_b * p_b
    return fused, np.argmax(fused, axis=-1)
