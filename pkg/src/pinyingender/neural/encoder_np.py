"""Vectorized numpy implementation of the encoder block.

Forward: token + position embeddings, one masked single-head
self-attention with residual and layer norm, one GELU feed-forward
with residual and layer norm.  Backward is hand-derived reverse mode;
both halves keep every array in float64 so finite-difference checks
are meaningful.

The compiled extension implements the same pair of entry points; this
module is the fallback selected at import when the extension is
missing.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .params import EncoderParams

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu_parts(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gelu(u), tanh term).  The tanh is cached by the forward pass so
    the backward pass never recomputes a transcendental; in-place
    arithmetic keeps the number of passes over the (B, T, 4d) arrays
    down, which is what this step is bound by."""
    inner = u * u
    inner *= u
    inner *= _GELU_K
    inner += u
    inner *= _GELU_C
    np.tanh(inner, out=inner)
    f = 1.0 + inner
    f *= u
    f *= 0.5
    return f, inner


def gelu(u: np.ndarray) -> np.ndarray:
    return gelu_parts(u)[0]


def gelu_grad_from(u: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Derivative of gelu given the cached tanh term."""
    dinner = u * u
    dinner *= 3.0 * _GELU_K
    dinner += 1.0
    dinner *= _GELU_C
    # 0.5 * ((1 + t) + u * (1 - t^2) * dinner)
    out = 1.0 - t * t
    out *= dinner
    out *= u
    out += 1.0
    out += t
    out *= 0.5
    return out


def gelu_grad(u: np.ndarray) -> np.ndarray:
    _, t = gelu_parts(u)
    return gelu_grad_from(u, t)


class EncoderCache(NamedTuple):
    ids: np.ndarray
    mask: np.ndarray
    x0: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray
    ctx: np.ndarray
    xhat1: np.ndarray
    inv1: np.ndarray
    h1: np.ndarray
    u: np.ndarray
    f: np.ndarray
    act: np.ndarray     # tanh term of the gelu, reused by backward
    xhat2: np.ndarray
    inv2: np.ndarray


def _layer_norm(x: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return (x - mean) * inv, inv


def _layer_norm_backward(d_out: np.ndarray, xhat: np.ndarray, inv: np.ndarray,
                         gain: np.ndarray):
    dy = d_out * gain
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dy_xhat = (dy * xhat).mean(axis=-1, keepdims=True)
    return inv * (dy - mean_dy - xhat * mean_dy_xhat)


def encoder_forward(p: EncoderParams, ids: np.ndarray, mask: np.ndarray):
    """Run the block over a padded batch.

    ids: (B, T) int64 token indices.  mask: (B, T) bool, True at real
    positions.  Masked positions are excluded as attention keys, so
    their token content cannot influence any real position.
    """
    batch, seq = ids.shape
    d = p.d
    scale = 1.0 / math.sqrt(d)

    x0 = p.emb[ids] + p.pos[np.newaxis, :seq, :]
    # position-wise matmuls run as one flat GEMM, not a batch of tiny ones
    flat_x0 = x0.reshape(-1, d)
    q = (flat_x0 @ p.wq).reshape(batch, seq, d)
    k = (flat_x0 @ p.wk).reshape(batch, seq, d)
    v = (flat_x0 @ p.wv).reshape(batch, seq, d)

    scores = (q @ k.transpose(0, 2, 1)) * scale
    scores = np.where(mask[:, np.newaxis, :], scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    att = np.exp(scores)
    att /= att.sum(axis=-1, keepdims=True)

    ctx = att @ v
    r1 = x0 + (ctx.reshape(-1, d) @ p.wo).reshape(batch, seq, d)
    xhat1, inv1 = _layer_norm(r1)
    h1 = xhat1 * p.ln1_g + p.ln1_b

    u = (h1.reshape(-1, d) @ p.w1).reshape(batch, seq, -1) + p.b1
    f, act = gelu_parts(u)
    ff = u.shape[2]
    r2 = h1 + (f.reshape(-1, ff) @ p.w2).reshape(batch, seq, d) + p.b2
    xhat2, inv2 = _layer_norm(r2)
    h = xhat2 * p.ln2_g + p.ln2_b

    cache = EncoderCache(ids, mask, x0, q, k, v, att, ctx,
                         xhat1, inv1, h1, u, f, act, xhat2, inv2)
    return h, cache


def encoder_backward(p: EncoderParams, cache: EncoderCache,
                     d_h: np.ndarray) -> EncoderParams:
    """Gradients of a scalar loss w.r.t. every encoder parameter, given
    the gradient w.r.t. the block output."""
    ids, mask, x0, q, k, v, att, ctx, xhat1, inv1, h1, u, f, act, xhat2, inv2 = cache
    batch, seq, d = x0.shape
    ff = p.w1.shape[1]
    scale = 1.0 / math.sqrt(d)

    g = EncoderParams.zeros_like(p)

    # layer norm 2
    g.ln2_g[:] = (d_h * xhat2).sum(axis=(0, 1))
    g.ln2_b[:] = d_h.sum(axis=(0, 1))
    d_r2 = _layer_norm_backward(d_h, xhat2, inv2, p.ln2_g)

    # feed-forward
    d_h1 = d_r2.copy()
    d_f = (d_r2.reshape(-1, d) @ p.w2.T).reshape(batch, seq, ff)
    g.w2[:] = f.reshape(-1, ff).T @ d_r2.reshape(-1, d)
    g.b2[:] = d_r2.sum(axis=(0, 1))
    d_u = d_f * gelu_grad_from(u, act)
    g.w1[:] = h1.reshape(-1, d).T @ d_u.reshape(-1, ff)
    g.b1[:] = d_u.sum(axis=(0, 1))
    d_h1 += (d_u.reshape(-1, ff) @ p.w1.T).reshape(batch, seq, d)

    # layer norm 1
    g.ln1_g[:] = (d_h1 * xhat1).sum(axis=(0, 1))
    g.ln1_b[:] = d_h1.sum(axis=(0, 1))
    d_r1 = _layer_norm_backward(d_h1, xhat1, inv1, p.ln1_g)

    # attention
    d_x0 = d_r1.copy()
    d_ctx = (d_r1.reshape(-1, d) @ p.wo.T).reshape(batch, seq, d)
    g.wo[:] = ctx.reshape(-1, d).T @ d_r1.reshape(-1, d)
    d_att = d_ctx @ v.transpose(0, 2, 1)
    d_v = att.transpose(0, 2, 1) @ d_ctx
    d_scores = att * (d_att - (d_att * att).sum(axis=-1, keepdims=True))
    d_scores *= scale
    d_q = d_scores @ k
    d_k = d_scores.transpose(0, 2, 1) @ q
    flat_x0 = x0.reshape(-1, d)
    g.wq[:] = flat_x0.T @ d_q.reshape(-1, d)
    g.wk[:] = flat_x0.T @ d_k.reshape(-1, d)
    g.wv[:] = flat_x0.T @ d_v.reshape(-1, d)
    d_x0 += (d_q.reshape(-1, d) @ p.wq.T +
             d_k.reshape(-1, d) @ p.wk.T +
             d_v.reshape(-1, d) @ p.wv.T).reshape(batch, seq, d)

    # embeddings
    g.pos[:seq] = d_x0.sum(axis=0)
    np.add.at(g.emb, ids.reshape(-1), d_x0.reshape(-1, d))
    return g
