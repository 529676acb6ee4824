"""Small hand-built networks that exhibit each hidden-symmetry mechanism."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Architecture, Network, he_init
from .symmetry import Hyperplane


def planted_stably_dead(seed: int = 0, width: int = 5, layer: int = 2, neuron: int = 2) -> Network:
    """He-initialised (w,w,w,w,1) net whose ``neuron`` in ``layer`` cannot fire:
    all incoming weights and the bias are clearly negative."""
    net = he_init((width, width, width, width, 1), seed)
    W = np.array(net.weights[layer - 1])
    b = np.array(net.bias(layer))
    W[neuron] = -(np.abs(W[neuron]) + 0.5)
    b[neuron] = -1.0
    return net.replace(layer, W=W, b=b)


def planted_never_coactive() -> Network:
    """(1,2,1,1): layer-1 neuron 0 is on for x > 1, the layer-2 neuron for x < -0.1."""
    return Network((1, 2, 1, 1),
                   [[[1.0], [-1.0]], [[0.0, 1.0]], [[1.0]]],
                   [[-1.0, 0.0], [-0.1]])


def planted_collapse() -> Network:
    """(1,1,1,1) computing ReLU(ReLU(x) - 2): the fold at x = 0 is invisible."""
    return Network((1, 1, 1, 1), [[[1.0]], [[1.0]], [[1.0]]], [[0.0], [-2.0]])


@dataclass(frozen=True)
class SubspaceImageNet:
    net: Network
    layer: int                  # layer whose neuron is rotated
    neuron: int
    S: Hyperplane               # contains the image of the previous layer
    anchor: np.ndarray          # on S and on the neuron's hyperplane


def planted_duplicated(seed: int = 0) -> SubspaceImageNet:
    """(1,2,2,1) with two identical layer-1 neurons.

    The layer-1 image lies on the diagonal of R^2, so any layer-2 neuron can
    be rotated about the point where its line crosses the diagonal without
    changing the function.
    """
    rng = np.random.default_rng(seed)
    w1 = float(rng.uniform(0.5, 1.5))
    b1 = float(rng.uniform(-0.5, 0.5))
    W2 = rng.uniform(0.3, 1.2, size=(2, 2))
    W2[1] = -W2[1]
    b2 = np.array([-0.5, 0.4])
    W3 = rng.standard_normal((1, 2))
    net = Network(Architecture((1, 2, 2, 1)), [[[w1], [w1]], W2, W3], [[b1, b1], b2])
    a = -b2[0] / W2[0].sum()
    diag = Hyperplane(normal=np.array([1.0, -1.0]) / np.sqrt(2.0), point=np.zeros(2))
    return SubspaceImageNet(net, 2, 0, diag, np.array([a, a]))


__all__ = ["planted_stably_dead", "planted_never_coactive", "planted_collapse", "planted_duplicated",
           "SubspaceImageNet"]
