"""Pure NumPy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The compiled versions must agree bitwise on the integer/RNG kernels and to
floating-point round-off on the training kernels.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

ACT_RELU = 0
ACT_TANH = 1


def _mix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """64-bit key for the (seed, stream) pair; counters are hashed under it."""
    return _mix_int((seed & MASK64) ^ _mix_int((stream + GOLDEN) & MASK64))


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, stream: int, start: int, n: int) -> np.ndarray:
    """Uniform doubles in [0, 1) at counters ``start .. start+n-1``."""
    key = np.uint64(stream_key(seed, stream))
    ctr = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(key + ctr * np.uint64(GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def weighted_draws(seed: int, stream: int, n_draws: int, cum_q: np.ndarray, offsets: np.ndarray,
                   members: np.ndarray) -> np.ndarray:
    """Draw rows: a stratum by inverse CDF over ``cum_q``, then a uniform member of it.

    ``members[offsets[k]:offsets[k+1]]`` are the row indices in stratum ``k``.
    """
    nk = len(cum_q)
    if len(offsets) != nk + 1 or offsets[0] != 0 or offsets[-1] > len(members) or np.any(np.diff(offsets) < 0):
        raise ValueError("stratum offsets must have one more entry than strata and fit the member list")
    u1 = uniforms(seed, stream, 0, n_draws)
    u2 = uniforms(seed, stream + 1, 0, n_draws)
    k = np.searchsorted(cum_q, u1, side="right")
    last = int(np.flatnonzero(np.diff(np.concatenate(([0.0], cum_q))) > 0)[-1])
    k = np.minimum(k, last)
    counts = offsets[k + 1] - offsets[k]
    j = np.minimum((u2 * counts).astype(np.int64), counts - 1)
    return members[offsets[k] + j].astype(np.intp)


def knn_donors(seed: int, stream: int, nbrs: np.ndarray) -> np.ndarray:
    """For each row pick one of its listed neighbours uniformly."""
    n, k = nbrs.shape
    u = uniforms(seed, stream, 0, n)
    j = np.minimum((u * k).astype(np.int64), k - 1)
    return nbrs[np.arange(n), j].astype(np.intp)


# ---------------------------------------------------------------------------
# statistics network (critic) for the Donsker-Varadhan bound


def _layers(flat: np.ndarray, dims: np.ndarray):
    out, o = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        w = flat[o:o + a * b].reshape(a, b)
        o += a * b
        bias = flat[o:o + b]
        o += b
        out.append((w, bias))
    return out


def _forward(flat, dims, z, act):
    hs, pre = [z], []
    layers = _layers(flat, dims)
    h = z
    for li, (w, b) in enumerate(layers):
        a = h @ w + b
        pre.append(a)
        if li < len(layers) - 1:
            h = np.maximum(a, 0.0) if act == ACT_RELU else np.tanh(a)
        else:
            h = a
        hs.append(h)
    return hs, pre


def _check_net(n_params: int, dims: np.ndarray, n_inputs: int) -> None:
    nl = len(dims) - 1
    if nl < 1 or nl > 63:
        raise ValueError("the critic needs between 1 and 63 layers")
    if np.any(dims <= 0):
        raise ValueError("layer widths must be positive")
    size = int(sum(a * b + b for a, b in zip(dims[:-1], dims[1:])))
    if dims[-1] != 1 or dims[0] != n_inputs or size != n_params:
        raise ValueError("parameter vector, layer widths and input width disagree")


def critic_forward(flat: np.ndarray, dims: np.ndarray, z: np.ndarray, act: int) -> np.ndarray:
    _check_net(len(flat), dims, z.shape[1])
    hs, _ = _forward(flat, dims, z, act)
    return hs[-1][:, 0].copy()


def critic_epoch(flat, m, v, dims, zb, c, cm, perm, batch_size, lr, ema_decay, act, t, ema):
    """One pass of minibatch gradient ascent on the DV objective.

    Network arrays are float32; scalar statistics and the Adam arithmetic
    are carried in double before rounding back.

    ``zb`` holds the conditioning features plus the first variable; the last
    input column is the click, taken from ``c`` for joint rows and from the
    donor column ``cm`` for marginal rows. Parameters and Adam moments are
    updated in place. Returns the new ``(t, ema)``.
    """
    n, p1 = zb.shape
    _check_net(len(flat), dims, p1 + 1)
    if len(m) != len(flat) or len(v) != len(flat):
        raise ValueError("Adam moments must match the parameter vector")
    if len(c) != n or len(cm) != n or len(perm) != n:
        raise ValueError("click columns and minibatch order must have one entry per row")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    if n and (perm.min() < 0 or perm.max() >= n):
        raise ValueError("minibatch order holds an out-of-range row")
    b1, b2, eps = 0.9, 0.999, 1e-8
    layers_g = None
    for s in range(0, n, batch_size):
        rows = perm[s:s + batch_size]
        bsz = len(rows)
        z = np.empty((2 * bsz, p1 + 1), dtype=np.float32)
        z[:bsz, :p1] = zb[rows]
        z[bsz:, :p1] = zb[rows]
        z[:bsz, p1] = c[rows]
        z[bsz:, p1] = cm[rows]
        hs, pre = _forward(flat, dims, z, act)
        tvals = hs[-1][:, 0].astype(np.float64)
        et = np.exp(tvals[bsz:])
        mean_et = float(et.mean())
        if not np.isfinite(mean_et) or not np.all(np.isfinite(tvals)):
            return t, float("nan")
        ema = mean_et if ema < 0 else ema_decay * ema + (1.0 - ema_decay) * mean_et
        g = np.empty((2 * bsz, 1), dtype=np.float32)
        g[:bsz, 0] = -1.0 / bsz
        g[bsz:, 0] = et / (bsz * ema)
        grad = np.empty_like(flat)
        layers = _layers(flat, dims)
        layers_g = _layers(grad, dims)
        d = g
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            gw, gb = layers_g[li]
            gw[...] = hs[li].T @ d
            gb[...] = d.sum(axis=0)
            if li > 0:
                dh = d @ w.T
                if act == ACT_RELU:
                    d = np.where(pre[li - 1] > 0.0, dh, np.float32(0.0))
                else:
                    d = dh * (1.0 - hs[li] * hs[li])
        t += 1
        g64 = grad.astype(np.float64)
        m[:] = b1 * m + (1.0 - b1) * g64
        v[:] = b2 * v + (1.0 - b2) * g64 * g64
        step = lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
        flat[:] = flat - step * m.astype(np.float64) / (np.sqrt(v.astype(np.float64)) + eps * np.sqrt(1.0 - b2 ** t))
    return t, ema


# ---------------------------------------------------------------------------
# depth-1 regression trees for gradient boosting


def best_stump(xs: np.ndarray, order: np.ndarray, g: np.ndarray, h: np.ndarray, gt: float, ht: float,
               l2: float):
    """Best single split over all features by the second-order gain.

    ``order[:, f]`` sorts column ``f`` of ``xs`` ascending; ``gt``/``ht`` are
    the gradient and hessian totals. Returns
    ``(feature, threshold, gain, G_left, H_left)``; ``feature == -1`` when no
    column has two distinct values.
    """
    n, d = xs.shape
    if order.shape != xs.shape or len(g) != n or len(h) != n:
        raise ValueError("sort order, gradients and hessians must align with the feature matrix")
    parent = gt * gt / (ht + l2)
    best = (-1, 0.0, 0.0, 0.0, 0.0)
    best_gain = 0.0
    for f in range(d):
        o = order[:, f]
        xf = xs[o, f]
        gl = np.cumsum(g[o])[:-1]
        hl = np.cumsum(h[o])[:-1]
        ok = xf[:-1] < xf[1:]
        if not ok.any():
            continue
        gain = gl * gl / (hl + l2) + (gt - gl) ** 2 / (ht - hl + l2) - parent
        gain = np.where(ok, gain, -np.inf)
        j = int(np.argmax(gain))
        if gain[j] > best_gain:
            best_gain = float(gain[j])
            best = (f, 0.5 * (xf[j] + xf[j + 1]), best_gain, float(gl[j]), float(hl[j]))
    return best
