"""Hot loops: per-sample parameter gradients and sign labels.

Both kernels operate on the canonical flat parameter vector plus an int64
array of layer widths.  A numba version is compiled when numba is importable
and ``RELUSYM_DISABLE_NUMBA`` is unset (or "0"); otherwise the vectorised
numpy twins are used.  The two backends agree to rounding and are cross
checked in the test suite.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("RELUSYM_DISABLE_NUMBA", "0").strip().lower()
_WANT_NUMBA = _FLAG in ("", "0", "false", "no")

try:  # pragma: no cover - depends on the environment
    if not _WANT_NUMBA:
        raise ImportError
    import numba as nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    nb = None
    HAVE_NUMBA = False


def layer_offsets(widths, out_bias: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Start of W^l and b^l inside the flat vector (b offset -1 when absent)."""
    d = len(widths) - 1
    woff = np.empty(d, dtype=np.int64)
    boff = np.full(d, -1, dtype=np.int64)
    pos = 0
    for ell in range(1, d + 1):
        woff[ell - 1] = pos
        pos += int(widths[ell]) * int(widths[ell - 1])
        if ell < d or out_bias:
            boff[ell - 1] = pos
            pos += int(widths[ell])
    return woff, boff


# ---------------------------------------------------------------- numpy

def _unpack(theta, widths, out_bias=False):
    woff, boff = layer_offsets(widths, out_bias)
    Ws, bs = [], []
    d = len(widths) - 1
    for ell in range(1, d + 1):
        n, p = int(widths[ell]), int(widths[ell - 1])
        Ws.append(theta[woff[ell - 1]:woff[ell - 1] + n * p].reshape(n, p))
        bs.append(theta[boff[ell - 1]:boff[ell - 1] + n] if boff[ell - 1] >= 0 else None)
    return Ws, bs


def grad_rows_numpy(theta, widths, X, out, out_bias=False):
    """Fill ``out[i*n_d + k]`` with d F_k(X[i]) / d theta."""
    Ws, bs = _unpack(theta, widths, out_bias)
    d = len(Ws)
    m = X.shape[0]
    n_out = int(widths[-1])
    woff, boff = layer_offsets(widths, out_bias)
    acts = [X]
    masks = []
    a = X
    for ell in range(d - 1):
        z = a @ Ws[ell].T + bs[ell]
        mask = z > 0
        a = np.where(mask, z, 0.0)
        masks.append(mask)
        acts.append(a)
    view = out.reshape(m, n_out, -1)
    view[...] = 0.0
    for k in range(n_out):
        # output layer: only row k of W^d carries a gradient
        p = int(widths[d - 1])
        s = woff[d - 1] + k * p
        view[:, k, s:s + p] = acts[d - 1]
        if out_bias:
            view[:, k, boff[d - 1] + k] = 1.0
        delta = np.broadcast_to(Ws[d - 1][k], (m, p))
        for ell in range(d - 1, 0, -1):
            delta = delta * masks[ell - 1]
            n, q = int(widths[ell]), int(widths[ell - 1])
            gW = delta[:, :, None] * acts[ell - 1][:, None, :]
            view[:, k, woff[ell - 1]:woff[ell - 1] + n * q] = gW.reshape(m, n * q)
            view[:, k, boff[ell - 1]:boff[ell - 1] + n] = delta
            if ell > 1:
                delta = delta @ Ws[ell - 1]
    return out


def sign_labels_numpy(theta, widths, X, atol, out_bias=False):
    """Ternary labels of every neuron (layers 1..d concatenated) per row of X."""
    Ws, bs = _unpack(theta, widths, out_bias)
    d = len(Ws)
    N = int(np.sum(widths[1:]))
    lab = np.empty((X.shape[0], N), dtype=np.int8)
    a = X
    col = 0
    for ell in range(d):
        z = a @ Ws[ell].T
        if bs[ell] is not None:
            z = z + bs[ell]
        n = z.shape[1]
        s = np.sign(z).astype(np.int8)
        s[np.abs(z) <= atol] = 0
        lab[:, col:col + n] = s
        col += n
        a = np.maximum(z, 0.0)
    return lab


# ---------------------------------------------------------------- numba

if HAVE_NUMBA:  # pragma: no branch

    @nb.njit(cache=True)
    def _grad_rows_nb(theta, widths, woff, boff, X, out):
        d = widths.shape[0] - 1
        m = X.shape[0]
        n_out = widths[d]
        tot = 0
        aoff = np.empty(d, np.int64)
        for ell in range(d):
            aoff[ell] = tot
            tot += widths[ell]
        maxw = 0
        for ell in range(d + 1):
            if widths[ell] > maxw:
                maxw = widths[ell]
        act = np.empty(tot)
        mask = np.zeros(tot, np.bool_)
        delta = np.empty(maxw)
        nxt = np.empty(maxw)
        for s in range(m):
            for j in range(widths[0]):
                act[j] = X[s, j]
            for ell in range(1, d):
                n = widths[ell]
                p = widths[ell - 1]
                for i in range(n):
                    z = theta[boff[ell - 1] + i]
                    base = woff[ell - 1] + i * p
                    for j in range(p):
                        z += theta[base + j] * act[aoff[ell - 1] + j]
                    on = z > 0.0
                    mask[aoff[ell] + i] = on
                    act[aoff[ell] + i] = z if on else 0.0
            for k in range(n_out):
                r = s * n_out + k
                for c in range(out.shape[1]):
                    out[r, c] = 0.0
                p = widths[d - 1]
                for j in range(p):
                    out[r, woff[d - 1] + k * p + j] = act[aoff[d - 1] + j]
                    delta[j] = theta[woff[d - 1] + k * p + j]
                if boff[d - 1] >= 0:
                    out[r, boff[d - 1] + k] = 1.0
                for ell in range(d - 1, 0, -1):
                    n = widths[ell]
                    q = widths[ell - 1]
                    for i in range(n):
                        if not mask[aoff[ell] + i]:
                            delta[i] = 0.0
                    for i in range(n):
                        g = delta[i]
                        out[r, boff[ell - 1] + i] = g
                        if g != 0.0:
                            base = woff[ell - 1] + i * q
                            for j in range(q):
                                out[r, base + j] = g * act[aoff[ell - 1] + j]
                    if ell > 1:
                        for j in range(q):
                            acc = 0.0
                            for i in range(n):
                                acc += theta[woff[ell - 1] + i * q + j] * delta[i]
                            nxt[j] = acc
                        for j in range(q):
                            delta[j] = nxt[j]
        return out

    @nb.njit(cache=True)
    def _sign_labels_nb(theta, widths, woff, boff, X, atol, lab):
        d = widths.shape[0] - 1
        maxw = 0
        for ell in range(d + 1):
            if widths[ell] > maxw:
                maxw = widths[ell]
        cur = np.empty(maxw)
        nxt = np.empty(maxw)
        for s in range(X.shape[0]):
            for j in range(widths[0]):
                cur[j] = X[s, j]
            col = 0
            for ell in range(1, d + 1):
                n = widths[ell]
                p = widths[ell - 1]
                for i in range(n):
                    z = theta[boff[ell - 1] + i] if boff[ell - 1] >= 0 else 0.0
                    base = woff[ell - 1] + i * p
                    for j in range(p):
                        z += theta[base + j] * cur[j]
                    if abs(z) <= atol:
                        lab[s, col + i] = 0
                    elif z > 0.0:
                        lab[s, col + i] = 1
                    else:
                        lab[s, col + i] = -1
                    nxt[i] = z if z > 0.0 else 0.0
                col += n
                for i in range(n):
                    cur[i] = nxt[i]
        return lab


def grad_rows(theta, widths, X, out=None, backend=None, out_bias=False):
    """Parameter-gradient rows for a batch of points (see ``grad_rows_numpy``)."""
    widths = np.asarray(widths, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if out is None:
        out = np.empty((X.shape[0] * int(widths[-1]), theta.size))
    use_nb = HAVE_NUMBA if backend is None else backend == "numba"
    if use_nb:
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but unavailable")
        woff, boff = layer_offsets(widths, out_bias)
        return _grad_rows_nb(theta, widths, woff, boff, X, out)
    return grad_rows_numpy(theta, widths, X, out, out_bias)


def sign_labels(theta, widths, X, atol=1e-12, backend=None, out_bias=False):
    """Ternary labels for a batch.  The batched matmuls of the numpy twin beat
    the per-point loop (see benchmarks/bench_kernels.py), so numba runs here
    only on request."""
    widths = np.asarray(widths, dtype=np.int64)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    use_nb = backend == "numba"
    if use_nb:
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but unavailable")
        woff, boff = layer_offsets(widths, out_bias)
        lab = np.empty((X.shape[0], int(np.sum(widths[1:]))), dtype=np.int8)
        return _sign_labels_nb(theta, widths, woff, boff, X, float(atol), lab)
    return sign_labels_numpy(theta, widths, X, atol, out_bias)


def default_backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
