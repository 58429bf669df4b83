"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin. Set ``MESHGAE_NO_NUMBA=1`` to force the
numpy path (useful for debugging and for the kernel benchmark).
"""
import os

import numpy as np

USE_NUMBA = os.environ.get("MESHGAE_NO_NUMBA", "0").lower() in ("0", "", "false", "no")

try:
    from numba import njit
except ImportError:  # pragma: no cover
    USE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# scatter-add of rows: out[index[k]] += src[k]


@njit(cache=True)
def _scatter_add_rows_nb(src, index, n_out):
    out = np.zeros((n_out, src.shape[1]))
    for k in range(src.shape[0]):
        i = index[k]
        for j in range(src.shape[1]):
            out[i, j] += src[k, j]
    return out


def _scatter_add_rows_np(src, index, n_out):
    out = np.zeros((n_out, src.shape[1]))
    np.add.at(out, index, src)
    return out


def scatter_add_rows(src, index, n_out):
    """Sum rows of ``src`` into ``n_out`` buckets given by ``index``."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if USE_NUMBA:
        return _scatter_add_rows_nb(src, index, n_out)
    return _scatter_add_rows_np(src, index, n_out)


# ---------------------------------------------------------------------------
# radius neighbour pairs on a uniform hash grid (2D)


@njit(cache=True)
def _radius_pairs_nb(pos, radius, h, max_pairs):
    n = pos.shape[0]
    xmin = pos[:, 0].min()
    ymin = pos[:, 1].min()
    nx = int((pos[:, 0].max() - xmin) / h) + 1
    ny = int((pos[:, 1].max() - ymin) / h) + 1
    cell = np.empty(n, dtype=np.int64)
    for i in range(n):
        cx = int((pos[i, 0] - xmin) / h)
        cy = int((pos[i, 1] - ymin) / h)
        cell[i] = cx * ny + cy
    order = np.argsort(cell, kind="mergesort")
    ncell = nx * ny
    start = np.zeros(ncell + 1, dtype=np.int64)
    for i in range(n):
        start[cell[i] + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    r2 = radius * radius
    cap = 16 * n
    out_s = np.empty(cap, dtype=np.int64)
    out_r = np.empty(cap, dtype=np.int64)
    m = 0
    for i in range(n):
        cx = cell[i] // ny
        cy = cell[i] % ny
        for dx in range(-1, 2):
            ax = cx + dx
            if ax < 0 or ax >= nx:
                continue
            for dy in range(-1, 2):
                ay = cy + dy
                if ay < 0 or ay >= ny:
                    continue
                c = ax * ny + ay
                for q in range(start[c], start[c + 1]):
                    j = order[q]
                    if j == i:
                        continue
                    ddx = pos[j, 0] - pos[i, 0]
                    ddy = pos[j, 1] - pos[i, 1]
                    if ddx * ddx + ddy * ddy <= r2:
                        if m == max_pairs:
                            return out_s[:0].copy(), out_r[:0].copy(), False
                        if m == cap:
                            cap *= 2
                            ns = np.empty(cap, dtype=np.int64)
                            nr = np.empty(cap, dtype=np.int64)
                            ns[:m] = out_s[:m]
                            nr[:m] = out_r[:m]
                            out_s = ns
                            out_r = nr
                        out_s[m] = j
                        out_r[m] = i
                        m += 1
    return out_s[:m].copy(), out_r[:m].copy(), True


def _radius_pairs_np(pos, radius, h, max_pairs):
    n = pos.shape[0]
    lo = pos.min(axis=0)
    ij = ((pos - lo) / h).astype(np.int64)
    ny = int(ij[:, 1].max()) + 1
    nx = int(ij[:, 0].max()) + 1
    cell = ij[:, 0] * ny + ij[:, 1]
    order = np.argsort(cell, kind="stable")
    counts = np.bincount(cell, minlength=nx * ny)
    start = np.concatenate(([0], np.cumsum(counts)))
    senders, receivers = [], []
    total = 0
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            ax = ij[:, 0] + dx
            ay = ij[:, 1] + dy
            ok = (ax >= 0) & (ax < nx) & (ay >= 0) & (ay < ny)
            recv = np.nonzero(ok)[0]
            c = ax[recv] * ny + ay[recv]
            cnt = counts[c]
            rep = np.repeat(recv, cnt)
            # position of each candidate inside its cell's run of ``order``
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            send = order[np.repeat(start[c], cnt) + offs]
            d = pos[send] - pos[rep]
            keep = (send != rep) & ((d * d).sum(axis=1) <= radius * radius)
            senders.append(send[keep])
            receivers.append(rep[keep])
            total += int(keep.sum())
            if total > max_pairs:
                return np.zeros(0, np.int64), np.zeros(0, np.int64), False
    return np.concatenate(senders), np.concatenate(receivers), True


def radius_pairs(pos, radius, max_pairs=2**62):
    """All directed pairs (j -> i), j != i, with ``|pos_j - pos_i| <= radius``.

    Returns ``(senders, receivers, ok)``; ``ok`` is False (and the arrays
    empty) when more than ``max_pairs`` pairs exist. Pair order is unspecified.
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    if len(pos) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), True
    # grid cells must be at least ``radius`` wide; widen them when the
    # radius is tiny so the grid stays O(n)
    extent = float((pos.max(axis=0) - pos.min(axis=0)).max())
    h = max(float(radius), extent / (2.0 * np.sqrt(len(pos)) + 1.0), 1e-300)
    if USE_NUMBA:
        return _radius_pairs_nb(pos, float(radius), h, int(max_pairs))
    return _radius_pairs_np(pos, float(radius), h, int(max_pairs))


# ---------------------------------------------------------------------------
# row-wise layer norm, fused forward and backward


@njit(cache=True)
def _layer_norm_fwd_nb(x, gain, bias, eps):
    n, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        r = 1.0 / np.sqrt(var / d + eps)
        inv[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            out[i, j] = h * gain[j] + bias[j]
    return out, xhat, inv


def _layer_norm_fwd_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1) + eps)
    xhat = xc * inv[:, None]
    return xhat * gain + bias, xhat, inv


@njit(cache=True)
def _layer_norm_bwd_nb(g, xhat, inv, gain):
    n, d = g.shape
    gx = np.empty_like(g)
    ggain = np.zeros(d)
    gbias = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gg = g[i, j] * gain[j]
            s1 += gg
            s2 += gg * xhat[i, j]
            ggain[j] += g[i, j] * xhat[i, j]
            gbias[j] += g[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            gx[i, j] = inv[i] * (g[i, j] * gain[j] - s1 - xhat[i, j] * s2)
    return gx, ggain, gbias


def _layer_norm_bwd_np(g, xhat, inv, gain):
    gg = g * gain
    gx = inv[:, None] * (gg - gg.mean(axis=1, keepdims=True)
                         - xhat * (gg * xhat).mean(axis=1, keepdims=True))
    return gx, (g * xhat).sum(axis=0), g.sum(axis=0)


def layer_norm_fwd(x, gain, bias, eps):
    """Returns ``(out, xhat, inv_std)``."""
    if USE_NUMBA:
        return _layer_norm_fwd_nb(np.ascontiguousarray(x), gain, bias, eps)
    return _layer_norm_fwd_np(x, gain, bias, eps)


def layer_norm_bwd(g, xhat, inv, gain):
    """Returns ``(grad_x, grad_gain, grad_bias)``."""
    if USE_NUMBA:
        return _layer_norm_bwd_nb(np.ascontiguousarray(g), xhat, inv, gain)
    return _layer_norm_bwd_np(g, xhat, inv, gain)


# ---------------------------------------------------------------------------
# ELU; the backward pass only needs the forward output


@njit(cache=True)
def _elu_fwd_nb(x, alpha):
    out = np.empty_like(x)
    xf = x.ravel()
    of = out.ravel()
    for k in range(xf.size):
        v = xf[k]
        of[k] = alpha * np.expm1(v) if v < 0.0 else v
    return out


def _elu_fwd_np(x, alpha):
    return np.where(x < 0, alpha * np.expm1(np.minimum(x, 0.0)), x)


@njit(cache=True)
def _elu_bwd_nb(g, out, alpha):
    gx = np.empty_like(g)
    gf = g.ravel()
    of = out.ravel()
    xf = gx.ravel()
    for k in range(gf.size):
        o = of[k]
        xf[k] = gf[k] * (o + alpha) if o < 0.0 else gf[k]
    return gx


def _elu_bwd_np(g, out, alpha):
    return np.where(out < 0, g * (out + alpha), g)


def elu_fwd(x, alpha):
    if USE_NUMBA:
        return _elu_fwd_nb(np.ascontiguousarray(x), alpha)
    return _elu_fwd_np(x, alpha)


def elu_bwd(g, out, alpha):
    if USE_NUMBA:
        return _elu_bwd_nb(np.ascontiguousarray(g), out, alpha)
    return _elu_bwd_np(g, out, alpha)
