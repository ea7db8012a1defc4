"""Hot inner loops: row scatter-adds, neighborhood-edge aggregation, triangle
listing and fused batch normalization.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy
vectorized version with the same signature.  The public names bound at the
bottom of this module point to one or the other depending on the
``NEARNET_BACKEND`` environment variable (``numba`` by default when numba
imports, ``numpy`` otherwise).  Both paths reduce in a fixed order, so a
given backend is bit-reproducible; the two backends agree to rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _choose_backend() -> str:
    requested = os.environ.get("NEARNET_BACKEND", "").strip().lower()
    if requested in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"NEARNET_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError("NEARNET_BACKEND=numba but numba is not importable")
    return requested


BACKEND = _choose_backend()


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scatter_rows_nb(index, src, values, n_out):
    """out[index[i]] += values[src[i]] for every i."""
    out = np.zeros((n_out, values.shape[1]))
    for i in range(index.shape[0]):
        o = index[i]
        s = src[i]
        for j in range(values.shape[1]):
            out[o, j] += values[s, j]
    return out


@njit(cache=True)
def _scatter_rows_weighted_nb(index, src, weight, values, n_out):
    out = np.zeros((n_out, values.shape[1]))
    for i in range(index.shape[0]):
        o = index[i]
        s = src[i]
        w = weight[i]
        for j in range(values.shape[1]):
            out[o, j] += w * values[s, j]
    return out


@njit(cache=True)
def _near_max_nb(center, u, z, H, n_out):
    out = np.zeros((n_out, H.shape[1]))
    for t in range(center.shape[0]):
        c = center[t]
        a = u[t]
        b = z[t]
        for j in range(H.shape[1]):
            x = H[a, j]
            y = H[b, j]
            out[c, j] += x if x >= y else y
    return out


@njit(cache=True)
def _near_max_backward_nb(center, u, z, H, grad_out):
    grad = np.zeros(H.shape)
    for t in range(center.shape[0]):
        c = center[t]
        a = u[t]
        b = z[t]
        for j in range(H.shape[1]):
            g = grad_out[c, j]
            # a select keeps the inner loop branch-free
            take_u = H[a, j] >= H[b, j]
            grad[a, j] += g if take_u else 0.0
            grad[b, j] += 0.0 if take_u else g
    return grad


@njit(cache=True)
def _near_prod_nb(center, u, z, H, n_out):
    out = np.zeros((n_out, H.shape[1]))
    for t in range(center.shape[0]):
        c = center[t]
        a = u[t]
        b = z[t]
        for j in range(H.shape[1]):
            out[c, j] += H[a, j] * H[b, j]
    return out


@njit(cache=True)
def _near_prod_backward_nb(center, u, z, H, grad_out):
    grad = np.zeros(H.shape)
    for t in range(center.shape[0]):
        c = center[t]
        a = u[t]
        b = z[t]
        for j in range(H.shape[1]):
            g = grad_out[c, j]
            grad[a, j] += g * H[b, j]
            grad[b, j] += g * H[a, j]
    return grad


@njit(cache=True)
def _triangles_nb(indptr, indices):
    """All triangles (a < b < c) of a CSR graph with sorted neighbor lists."""
    n = indptr.shape[0] - 1
    cap = 16
    out = np.empty((cap, 3), dtype=np.int64)
    count = 0
    for a in range(n):
        for p in range(indptr[a], indptr[a + 1]):
            b = indices[p]
            if b <= a:
                continue
            # merge-intersect N(a) and N(b), keeping c > b
            i = indptr[a]
            j = indptr[b]
            while i < indptr[a + 1] and j < indptr[b + 1]:
                x = indices[i]
                y = indices[j]
                if x < y:
                    i += 1
                elif y < x:
                    j += 1
                else:
                    if x > b:
                        if count == cap:
                            cap *= 2
                            grown = np.empty((cap, 3), dtype=np.int64)
                            grown[:count] = out[:count]
                            out = grown
                        out[count, 0] = a
                        out[count, 1] = b
                        out[count, 2] = x
                        count += 1
                    i += 1
                    j += 1
    return out[:count].copy()


@njit(cache=True)
def _batchnorm_train_nb(x, scale, shift, eps):
    """Batch statistics, normalized input and affine output in two passes."""
    m, d = x.shape
    mean = np.zeros(d)
    var = np.zeros(d)
    for i in range(m):
        for j in range(d):
            mean[j] += x[i, j]
    for j in range(d):
        mean[j] /= m
    for i in range(m):
        for j in range(d):
            c = x[i, j] - mean[j]
            var[j] += c * c
    inv_std = np.empty(d)
    for j in range(d):
        var[j] /= m
        inv_std[j] = 1.0 / np.sqrt(var[j] + eps)
    xhat = np.empty((m, d))
    out = np.empty((m, d))
    for i in range(m):
        for j in range(d):
            h = (x[i, j] - mean[j]) * inv_std[j]
            xhat[i, j] = h
            out[i, j] = h * scale[j] + shift[j]
    return out, xhat, mean, var, inv_std


@njit(cache=True)
def _batchnorm_backward_nb(grad, xhat, inv_std, scale, train):
    m, d = grad.shape
    g_scale = np.zeros(d)
    g_shift = np.zeros(d)
    for i in range(m):
        for j in range(d):
            g_scale[j] += grad[i, j] * xhat[i, j]
            g_shift[j] += grad[i, j]
    gx = np.empty((m, d))
    if train:
        for i in range(m):
            for j in range(d):
                gx[i, j] = (scale[j] * inv_std[j] / m) * (m * grad[i, j] - g_shift[j] - xhat[i, j] * g_scale[j])
    else:
        for i in range(m):
            for j in range(d):
                gx[i, j] = grad[i, j] * scale[j] * inv_std[j]
    return gx, g_scale, g_shift


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------


def _batchnorm_train_np(x, scale, shift, eps):
    mean = x.mean(axis=0)
    xc = x - mean
    var = np.einsum("ij,ij->j", xc, xc) / x.shape[0]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * scale + shift, xhat, mean, var, inv_std


def _batchnorm_backward_np(grad, xhat, inv_std, scale, train):
    g_scale = np.einsum("ij,ij->j", grad, xhat)
    g_shift = grad.sum(axis=0)
    if not train:
        return grad * (scale * inv_std), g_scale, g_shift
    m = grad.shape[0]
    gx = (scale * inv_std / m) * (m * grad - g_shift - xhat * g_scale)
    return gx, g_scale, g_shift


def _scatter_rows_np(index, src, values, n_out):
    out = np.zeros((n_out, values.shape[1]))
    np.add.at(out, index, values[src])
    return out


def _scatter_rows_weighted_np(index, src, weight, values, n_out):
    out = np.zeros((n_out, values.shape[1]))
    np.add.at(out, index, weight[:, None] * values[src])
    return out


def _near_max_np(center, u, z, H, n_out):
    out = np.zeros((n_out, H.shape[1]))
    np.add.at(out, center, np.maximum(H[u], H[z]))
    return out


def _near_max_backward_np(center, u, z, H, grad_out):
    grad = np.zeros(H.shape)
    g = grad_out[center]
    pick_u = H[u] >= H[z]
    np.add.at(grad, u, np.where(pick_u, g, 0.0))
    np.add.at(grad, z, np.where(pick_u, 0.0, g))
    return grad


def _near_prod_np(center, u, z, H, n_out):
    out = np.zeros((n_out, H.shape[1]))
    np.add.at(out, center, H[u] * H[z])
    return out


def _near_prod_backward_np(center, u, z, H, grad_out):
    grad = np.zeros(H.shape)
    g = grad_out[center]
    np.add.at(grad, u, g * H[z])
    np.add.at(grad, z, g * H[u])
    return grad


def _triangles_np(indptr, indices):
    n = indptr.shape[0] - 1
    if n == 0:
        return np.empty((0, 3), dtype=np.int64)
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    adj[rows, indices] = True
    a, b = np.nonzero(np.triu(adj, 1))
    # c > b among common neighbors of the edge (a, b)
    common = adj[a] & adj[b]
    common &= np.arange(n)[None, :] > b[:, None]
    e, c = np.nonzero(common)
    tri = np.stack([a[e], b[e], c], axis=1).astype(np.int64)
    order = np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0]))
    return tri[order]


NUMBA_KERNELS = {
    "scatter_rows": _scatter_rows_nb,
    "scatter_rows_weighted": _scatter_rows_weighted_nb,
    "near_max": _near_max_nb,
    "near_max_backward": _near_max_backward_nb,
    "near_prod": _near_prod_nb,
    "near_prod_backward": _near_prod_backward_nb,
    "triangles": _triangles_nb,
    "batchnorm_train": _batchnorm_train_nb,
    "batchnorm_backward": _batchnorm_backward_nb,
}

NUMPY_KERNELS = {
    "scatter_rows": _scatter_rows_np,
    "scatter_rows_weighted": _scatter_rows_weighted_np,
    "near_max": _near_max_np,
    "near_max_backward": _near_max_backward_np,
    "near_prod": _near_prod_np,
    "near_prod_backward": _near_prod_backward_np,
    "triangles": _triangles_np,
    "batchnorm_train": _batchnorm_train_np,
    "batchnorm_backward": _batchnorm_backward_np,
}

_ACTIVE = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS

scatter_rows = _ACTIVE["scatter_rows"]
scatter_rows_weighted = _ACTIVE["scatter_rows_weighted"]
near_max = _ACTIVE["near_max"]
near_max_backward = _ACTIVE["near_max_backward"]
near_prod = _ACTIVE["near_prod"]
near_prod_backward = _ACTIVE["near_prod_backward"]
triangles = _ACTIVE["triangles"]
batchnorm_train = _ACTIVE["batchnorm_train"]
batchnorm_backward = _ACTIVE["batchnorm_backward"]
