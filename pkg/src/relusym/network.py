"""Architectures, parameters, evaluation, ternary labels and I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .rng import keyed_rng

DEFAULT_ZERO_ATOL = 1e-12


class ShapeMismatchError(ValueError):
    pass


class NetworkFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(n_0, ..., n_d)``.

    By default the output layer map is W^d x with no bias.  ``output_bias``
    adds b^d (stored after W^d in the flat order); the no-hidden-symmetry
    construction needs it, see ``relusym.construct``.
    """

    widths: tuple[int, ...]
    output_bias: bool = False

    def __init__(self, widths, output_bias: bool = False):
        if isinstance(widths, Architecture):
            output_bias = output_bias or widths.output_bias
            widths = widths.widths
        w = tuple(int(n) for n in widths)
        if len(w) < 2:
            raise ValueError("an architecture needs at least an input and an output layer")
        if any(n < 1 for n in w):
            raise ValueError(f"widths must be positive, got {w}")
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "output_bias", bool(output_bias))

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    d = depth

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_widths)

    @property
    def n_neurons(self) -> int:
        return sum(self.widths[1:])

    @property
    def D(self) -> int:
        return param_count(self)

    def __iter__(self):
        return iter(self.widths)

    def __len__(self):
        return len(self.widths)

    def __str__(self):
        return "(" + ",".join(map(str, self.widths)) + ")" + ("+b" if self.output_bias else "")

    def with_output_bias(self, flag: bool = True) -> "Architecture":
        return Architecture(self.widths, flag)

    @classmethod
    def parse(cls, text: str, output_bias: bool = False) -> "Architecture":
        text = text.strip()
        if text.endswith("+b"):
            text, output_bias = text[:-2], True
        return cls([int(t) for t in text.replace("(", "").replace(")", "").split(",") if t.strip()],
                   output_bias)

    @cached_property
    def neuron_index(self) -> list[tuple[int, int]]:
        """Flat neuron order: (layer, index) for layers 1..d."""
        return [(ell, i) for ell in range(1, self.depth + 1) for i in range(self.widths[ell])]

    def neuron_offset(self, layer: int) -> int:
        return sum(self.widths[1:layer])


def as_arch(arch) -> Architecture:
    return arch if isinstance(arch, Architecture) else Architecture(arch)


def param_count(arch) -> int:
    arch = as_arch(arch)
    w = arch.widths
    D = -w[-1] + sum(w[i] * (w[i - 1] + 1) for i in range(1, len(w)))
    return D + w[-1] if arch.output_bias else D


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Network:
    """Immutable parameter point θ with structured and flat views.

    ``weights[l-1]`` is W^l (n_l x n_{l-1}); ``biases[l-1]`` is b^l for the
    hidden layers (and the output layer when ``arch.output_bias``).  ``flat``
    follows the canonical order: per layer the weight matrix row-major then
    the bias, with the output layer last.
    """

    __slots__ = ("arch", "weights", "biases", "_flat", "__weakref__")

    def __init__(self, arch, weights, biases):
        arch = as_arch(arch)
        w = arch.widths
        nb = arch.depth if arch.output_bias else arch.depth - 1
        if len(weights) != arch.depth or len(biases) != nb:
            raise ShapeMismatchError(
                f"expected {arch.depth} weight matrices and {nb} bias vectors")
        Ws, bs = [], []
        for ell in range(1, arch.depth + 1):
            W = np.asarray(weights[ell - 1], dtype=np.float64)
            if W.shape != (w[ell], w[ell - 1]):
                raise ShapeMismatchError(f"W^{ell} has shape {W.shape}, expected {(w[ell], w[ell - 1])}")
            Ws.append(_frozen(W))
            if ell <= nb:
                b = np.asarray(biases[ell - 1], dtype=np.float64)
                if b.shape != (w[ell],):
                    raise ShapeMismatchError(f"b^{ell} has shape {b.shape}, expected {(w[ell],)}")
                bs.append(_frozen(b))
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "weights", tuple(Ws))
        object.__setattr__(self, "biases", tuple(bs))
        object.__setattr__(self, "_flat", None)

    def __setattr__(self, name, value):
        raise AttributeError("Network is immutable")

    # -- flat view
    @property
    def flat(self) -> np.ndarray:
        if self._flat is None:
            parts = []
            for ell in range(self.arch.depth):
                parts.append(self.weights[ell].ravel())
                if ell < len(self.biases):
                    parts.append(self.biases[ell])
            object.__setattr__(self, "_flat", _frozen(np.concatenate(parts)))
        return self._flat

    @classmethod
    def from_flat(cls, arch, theta) -> "Network":
        arch = as_arch(arch)
        theta = np.asarray(theta, dtype=np.float64).ravel()
        if theta.size != arch.D:
            raise ShapeMismatchError(f"flat vector has length {theta.size}, expected {arch.D}")
        Ws, bs = _kernels._unpack(theta, np.asarray(arch.widths, dtype=np.int64), arch.output_bias)
        return cls(arch, Ws, [b for b in bs if b is not None])

    def with_flat(self, theta) -> "Network":
        return Network.from_flat(self.arch, theta)

    def replace(self, layer: int, W=None, b=None) -> "Network":
        """Copy with W^layer and/or b^layer replaced (layer is 1-based)."""
        Ws = list(self.weights)
        bs = list(self.biases)
        if W is not None:
            Ws[layer - 1] = W
        if b is not None:
            bs[layer - 1] = b
        return Network(self.arch, Ws, bs)

    @property
    def widths_array(self) -> np.ndarray:
        return np.asarray(self.arch.widths, dtype=np.int64)

    def bias(self, layer: int) -> np.ndarray:
        """b^layer, or zeros for a bias-free output layer."""
        if layer > len(self.biases):
            return np.zeros(self.arch.widths[layer])
        return self.biases[layer - 1]

    def __eq__(self, other):
        return (isinstance(other, Network) and self.arch == other.arch
                and np.array_equal(self.flat, other.flat))

    def __hash__(self):
        return hash((self.arch, self.flat.tobytes()))

    def digest(self) -> str:
        """Short content hash used to tag reproducible findings."""
        import hashlib
        h = hashlib.sha256(repr((self.arch.widths, self.arch.output_bias)).encode() + self.flat.tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"Network(arch={self.arch}, D={self.arch.D})"

    # -- evaluation helpers
    def preactivations(self, X) -> list[np.ndarray]:
        """Batched pre-activations z^1..z^d for rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.arch.n_in:
            raise ShapeMismatchError(f"inputs have dimension {X.shape[1]}, expected {self.arch.n_in}")
        zs = []
        a = X
        for ell in range(1, self.arch.depth + 1):
            z = a @ self.weights[ell - 1].T + self.bias(ell)
            zs.append(z)
            a = np.maximum(z, 0.0)
        return zs

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = self.preactivations(X)[-1]
        return out[0] if X.ndim == 1 else out

    def layer_image(self, X, layer: int) -> np.ndarray:
        """F_(layer)(X): post-activation output of hidden layer ``layer``."""
        if layer == 0:
            return np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.maximum(self.preactivations(X)[layer - 1], 0.0)


@dataclass(frozen=True)
class EvalTrace:
    x: np.ndarray
    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]
    output: np.ndarray


def forward(params: Network, x) -> EvalTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.n_in,):
        raise ShapeMismatchError(f"x has shape {x.shape}, expected ({params.arch.n_in},)")
    zs = [z[0] for z in params.preactivations(x[None])]
    posts = [np.maximum(z, 0.0) for z in zs[:-1]]
    return EvalTrace(x=x, pre=tuple(zs), post=tuple(posts), output=zs[-1])


@dataclass(frozen=True)
class TernaryLabel:
    """Per-layer sign tuples for layers 1..d."""

    layers: tuple[tuple[int, ...], ...]

    def __init__(self, layers):
        ls = tuple(tuple(int(v) for v in s) for s in layers)
        for s in ls:
            if any(v not in (-1, 0, 1) for v in s):
                raise ValueError("ternary entries must be -1, 0 or +1")
        object.__setattr__(self, "layers", ls)

    @property
    def dim_per_layer(self) -> tuple[int, ...]:
        return tuple(sum(1 for v in s if v == 1) for s in self.layers)

    @property
    def flat(self) -> tuple[int, ...]:
        return tuple(v for s in self.layers for v in s)

    @property
    def n_zeros(self) -> int:
        return sum(1 for v in self.flat if v == 0)

    @property
    def is_pm(self) -> bool:
        return self.n_zeros == 0

    @classmethod
    def from_flat(cls, arch, flat) -> "TernaryLabel":
        arch = as_arch(arch)
        flat = [int(v) for v in flat]
        out, pos = [], 0
        for n in arch.widths[1:]:
            out.append(flat[pos:pos + n])
            pos += n
        return cls(out)

    def __str__(self):
        ch = {1: "+", -1: "-", 0: "0"}
        return "|".join("".join(ch[v] for v in s) for s in self.layers)

    @classmethod
    def parse(cls, text: str) -> "TernaryLabel":
        val = {"+": 1, "-": -1, "0": 0}
        return cls([[val[c] for c in part] for part in text.split("|")])


def ternary_label(params: Network, x, zero_atol: float = DEFAULT_ZERO_ATOL) -> TernaryLabel:
    if zero_atol < 0:
        raise ValueError("zero_atol must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.n_in,):
        raise ShapeMismatchError(f"x has shape {x.shape}, expected ({params.arch.n_in},)")
    flat = _kernels.sign_labels(params.flat, params.widths_array, x[None], zero_atol,
                                out_bias=params.arch.output_bias)[0]
    return TernaryLabel.from_flat(params.arch, flat)


def label_batch(params: Network, X, zero_atol: float = DEFAULT_ZERO_ATOL) -> np.ndarray:
    """int8 array (m, N) of ternary labels, neurons in flat order."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.arch.n_in:
        raise ShapeMismatchError(f"inputs have dimension {X.shape[1]}, expected {params.arch.n_in}")
    return _kernels.sign_labels(params.flat, params.widths_array, X, zero_atol,
                                out_bias=params.arch.output_bias)


def he_init(arch, seed: int, bias_std: float = 0.1) -> Network:
    """Weights ~ N(0, 2/fan_in); biases ~ N(0, bias_std^2) (variance 0.01 by default)."""
    if bias_std < 0:
        raise ValueError("bias_std must be non-negative")
    arch = as_arch(arch)
    w = arch.widths
    Ws, bs = [], []
    for ell in range(1, arch.depth + 1):
        rng = keyed_rng(seed, "he_init", ell)
        Ws.append(rng.normal(0.0, math.sqrt(2.0 / w[ell - 1]), size=(w[ell], w[ell - 1])))
        if ell < arch.depth or arch.output_bias:
            bs.append(rng.normal(0.0, bias_std, size=w[ell]))
    return Network(arch, Ws, bs)


def to_dict(params: Network) -> dict:
    doc = {
        "arch": list(params.arch.widths),
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    if params.arch.output_bias:
        doc["output_bias"] = True
    return doc


def serialize(params: Network) -> str:
    # json writes floats with repr(), which round-trips binary64 exactly
    return json.dumps(to_dict(params), allow_nan=False)


def _check_numbers(obj, where):
    if isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_numbers(v, f"{where}[{i}]")
    elif isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise NetworkFormatError(f"non-numeric value at {where}: {obj!r}")
    elif not math.isfinite(obj):
        raise NetworkFormatError(f"non-finite value at {where}")


def from_dict(doc) -> Network:
    if not isinstance(doc, dict) or not {"arch", "weights", "biases"} <= set(doc):
        raise NetworkFormatError("document must contain arch, weights and biases")
    _check_numbers(doc["arch"], "arch")
    _check_numbers(doc["weights"], "weights")
    _check_numbers(doc["biases"], "biases")
    if not isinstance(doc["weights"], list) or not isinstance(doc["biases"], list):
        raise NetworkFormatError("weights and biases must be lists")
    depth = len(doc["arch"]) - 1
    ob = bool(doc.get("output_bias", len(doc["biases"]) == depth and depth > 0))
    arch = Architecture(doc["arch"], ob)
    if len(doc["weights"]) != arch.depth or len(doc["biases"]) != arch.depth - (0 if ob else 1):
        raise ShapeMismatchError("layer count does not match arch")
    for ell, W in enumerate(doc["weights"], start=1):
        if not isinstance(W, list) or len(W) != arch.widths[ell]:
            raise ShapeMismatchError(f"W^{ell} must have {arch.widths[ell]} rows")
        for r, row in enumerate(W):
            if not isinstance(row, list) or len(row) != arch.widths[ell - 1]:
                raise ShapeMismatchError(f"row {r} of W^{ell} has the wrong length")
    try:
        return Network(arch, [np.array(W, dtype=float) for W in doc["weights"]],
                       [np.array(b, dtype=float) for b in doc["biases"]])
    except ValueError as exc:
        if isinstance(exc, ShapeMismatchError):
            raise
        raise ShapeMismatchError(str(exc)) from exc


def _reject_constant(token):
    raise NetworkFormatError(f"non-finite literal {token}")


def deserialize(text: str) -> Network:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"malformed network document: {exc}") from exc
    return from_dict(doc)


def load(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


def save(params: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(params))
        fh.write("\n")
