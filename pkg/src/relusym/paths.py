"""Open-path polynomial of a fixed activation pattern.

On a ±-region the k-th output is a polynomial in θ (and affine in x): a sum
over complete paths in the computational graph, augmented with one bias
vertex per non-output layer, that end at output k and pass only through
active neurons.  Each path contributes the product of its edge parameters,
times x_i when it starts at input i.  This module enumerates those paths
explicitly and is used as an independent oracle for ``forward`` and
``grad_wrt_params``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import layer_offsets
from .network import DEFAULT_ZERO_ATOL, Network, TernaryLabel, as_arch, ternary_label

MAX_NEURONS = 20
MAX_PATHS = 2_000_000


class PathExplosionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathMonomial:
    """One open complete path.  ``start`` is ('x', i) or ('b', layer) for the bias vertex of
    that layer (0-based); ``edges`` are flat parameter indices."""

    start: tuple[str, int]
    edges: tuple[int, ...]


def param_name(arch, index: int) -> str:
    """Human-readable name such as ``W^2_{13}`` or ``b^1_3`` (1-based indices)."""
    arch = as_arch(arch)
    w = np.asarray(arch.widths, dtype=np.int64)
    woff, boff = layer_offsets(w, arch.output_bias)
    for ell in range(arch.depth, 0, -1):
        if boff[ell - 1] >= 0 and index >= boff[ell - 1]:
            return f"b^{ell}_{index - boff[ell - 1] + 1}"
        if index >= woff[ell - 1]:
            r, c = divmod(index - woff[ell - 1], arch.widths[ell - 1])
            return f"W^{ell}_{{{r + 1}{c + 1}}}"
    raise IndexError(index)


def open_paths(arch, label: TernaryLabel, k: int, gate_output: bool = False) -> list[PathMonomial]:
    """All open complete paths ending at output ``k`` (0-based).

    Hidden vertices on a path must carry +1.  With ``gate_output`` the output
    vertex must be +1 too; by default it is not gated, so the polynomial
    reproduces the (linear) output layer exactly.
    """
    arch = as_arch(arch)
    w = arch.widths
    d = arch.depth
    if arch.n_neurons > MAX_NEURONS:
        raise PathExplosionError(f"{arch.n_neurons} neurons exceed the cap of {MAX_NEURONS}")
    if gate_output and label.layers[d - 1][k] != 1:
        return []
    woff, boff = layer_offsets(np.asarray(w, dtype=np.int64), arch.output_bias)

    def W_idx(ell, r, c):
        return int(woff[ell - 1] + r * w[ell - 1] + c)

    # backward DFS from output k: partial paths as (layer, neuron, edges)
    out: list[PathMonomial] = []
    stack = [(d, k, ())]
    while stack:
        ell, j, edges = stack.pop()
        if len(out) > MAX_PATHS:
            raise PathExplosionError("too many open paths")
        # bias vertex of layer ell-1 feeds neuron j of layer ell
        if boff[ell - 1] >= 0:
            out.append(PathMonomial(("b", ell - 1), (int(boff[ell - 1] + j),) + edges))
        if ell == 1:
            for i in range(w[0]):
                out.append(PathMonomial(("x", i), (W_idx(1, j, i),) + edges))
            continue
        for i in range(w[ell - 1]):
            if label.layers[ell - 2][i] == 1:
                stack.append((ell - 1, i, (W_idx(ell, j, i),) + edges))
    out.sort(key=lambda p: (p.start, p.edges))
    return out


def path_polynomial(params: Network, x, k: int = 0, label: TernaryLabel | None = None,
                    gate_output: bool = False,
                    zero_atol: float = DEFAULT_ZERO_ATOL) -> tuple[float, np.ndarray]:
    """Value and θ-gradient of the open-path polynomial for output k at x."""
    x = np.asarray(x, dtype=np.float64)
    if label is None:
        label = ternary_label(params, x, zero_atol)
    theta = params.flat
    grad = np.zeros(theta.size)
    value = 0.0
    for p in open_paths(params.arch, label, k, gate_output):
        coef = x[p.start[1]] if p.start[0] == "x" else 1.0
        vals = theta[list(p.edges)]
        value += coef * float(np.prod(vals))
        for t, e in enumerate(p.edges):
            grad[e] += coef * float(np.prod(np.delete(vals, t)))
    return value, grad
