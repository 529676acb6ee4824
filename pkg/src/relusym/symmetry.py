"""Parameter-space symmetries and detectors for the ways hidden symmetries arise.

The permutation (P) and positive scaling (S) actions never change the
function.  The detectors look for the four local mechanisms that enlarge a
fiber beyond those actions: stably unactivated neurons, never-coactive
adjacent pairs, folds that the output cannot see (collapse), and hidden-layer
images that sit in a proper affine subspace.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import Architecture, Network, label_batch
from .regions import MAX_INPUT_DIM, enumerate_regions
from .rng import keyed_rng

DEFAULT_MARGIN = 1e-6
COLLAPSE_ATOL = 1e-9
FIBER_ATOL = 1e-9
ORTHO_TOL = 1e-10
CENSUS_SAMPLES = 100_000
DEAD_SAMPLES = 10_000


class ArchitectureMismatchError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


# ---------------------------------------------------------------- actions

def _check_hidden(arch: Architecture, layer: int):
    if not (1 <= layer <= arch.depth - 1):
        raise SymmetryError(f"layer {layer} is not hidden (hidden layers are 1..{arch.depth - 1})")


def apply_permutation(params: Network, layer: int, perm) -> Network:
    """Reorder the neurons of a hidden layer: rows of W^l, b^l and columns of W^(l+1)."""
    arch = params.arch
    _check_hidden(arch, layer)
    perm = np.asarray(perm)
    n = arch.widths[layer]
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise SymmetryError(f"not a permutation of {n} neurons: {perm.tolist()}")
    Ws = [W.copy() for W in params.weights]
    bs = [params.bias(ell).copy() for ell in range(1, arch.depth + 1)]
    Ws[layer - 1] = Ws[layer - 1][perm]
    bs[layer - 1] = bs[layer - 1][perm]
    Ws[layer] = Ws[layer][:, perm]
    return Network(arch, Ws, bs if arch.output_bias else bs[:-1])


def apply_scaling(params: Network, layer: int, neuron: int, c: float) -> Network:
    """Multiply a hidden neuron's incoming weights and bias by c > 0, divide its outgoing weights by c."""
    if not c > 0:
        raise SymmetryError(f"scaling factor must be positive, got {c}")
    arch = params.arch
    _check_hidden(arch, layer)
    if not (0 <= neuron < arch.widths[layer]):
        raise SymmetryError(f"neuron {neuron} out of range for layer {layer}")
    Ws = [W.copy() for W in params.weights]
    bs = [params.bias(ell).copy() for ell in range(1, arch.depth + 1)]
    Ws[layer - 1][neuron] *= c
    bs[layer - 1][neuron] *= c
    Ws[layer][:, neuron] /= c
    return Network(arch, Ws, bs if arch.output_bias else bs[:-1])


@dataclass(frozen=True)
class SymmetryAction:
    """A single (P) or (S) action; ``kind`` is "permutation" or "scaling"."""
    kind: str
    layer: int
    perm: tuple[int, ...] | None = None
    neuron: int | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind == "permutation":
            if self.perm is None:
                raise SymmetryError("permutation action needs perm")
        elif self.kind == "scaling":
            if self.neuron is None or self.c is None:
                raise SymmetryError("scaling action needs neuron and c")
            if not self.c > 0:
                raise SymmetryError(f"scaling factor must be positive, got {self.c}")
        else:
            raise SymmetryError(f"unknown action kind {self.kind!r}")

    def apply(self, params: Network) -> Network:
        if self.kind == "permutation":
            return apply_permutation(params, self.layer, self.perm)
        return apply_scaling(params, self.layer, self.neuron, self.c)

    @classmethod
    def random(cls, arch, rng: np.random.Generator) -> "SymmetryAction":
        arch = Architecture(arch) if not isinstance(arch, Architecture) else arch
        if arch.depth < 2:
            raise SymmetryError("architecture has no hidden layer")
        layer = int(rng.integers(1, arch.depth))
        if rng.random() < 0.5:
            return cls("permutation", layer, perm=tuple(int(i) for i in rng.permutation(arch.widths[layer])))
        return cls("scaling", layer, neuron=int(rng.integers(arch.widths[layer])),
                   c=float(np.exp(rng.uniform(-2.0, 2.0))))


# ---------------------------------------------------------------- findings

def _witness(params: Network, seed, **idx) -> dict:
    return {"digest": params.digest(), "seed": seed, **idx}


@dataclass
class DeadNeuron:
    layer: int
    neuron: int
    criterion: str              # "orthant-separation" or "sampled"
    margin: float
    witness: dict


@dataclass
class CoactivityFinding:
    layer: int                  # neuron i of this layer, neuron j of the next
    i: int
    j: int
    evidence: str               # "region-enumeration" or "sampled"
    n_checked: int
    witness: dict


@dataclass
class CollapseFinding:
    pattern_a: str
    pattern_b: str
    layer: int
    neuron: int
    max_map_diff: float
    point: list[float]
    witness: dict


@dataclass
class ImageDimension:
    layer: int
    dimension: int
    deficiency: int
    n_samples: int
    witness: dict


@dataclass
class MechanismReport:
    stably_unactivated: list[DeadNeuron] = field(default_factory=list)
    never_coactive: list[CoactivityFinding] = field(default_factory=list)
    collapse: list[CollapseFinding] = field(default_factory=list)
    lowdim_image: list[ImageDimension] = field(default_factory=list)

    @property
    def any_found(self) -> bool:
        return bool(self.stably_unactivated or self.never_coactive or self.collapse
                    or any(d.deficiency > 0 for d in self.lowdim_image))

    def to_dict(self) -> dict:
        return {k: [asdict(f) for f in getattr(self, k)]
                for k in ("stably_unactivated", "never_coactive", "collapse", "lowdim_image")}

    def to_text(self) -> str:
        lines = []
        for f in self.stably_unactivated:
            lines.append(f"stably-unactivated layer={f.layer} neuron={f.neuron} "
                         f"criterion={f.criterion} margin={f.margin:g} witness={json.dumps(f.witness)}")
        for f in self.never_coactive:
            lines.append(f"never-coactive ({f.layer},{f.i})-({f.layer + 1},{f.j}) evidence={f.evidence} "
                         f"checked={f.n_checked} witness={json.dumps(f.witness)}")
        for f in self.collapse:
            lines.append(f"collapse {f.pattern_a} ~ {f.pattern_b} across ({f.layer},{f.neuron}) "
                         f"diff={f.max_map_diff:.3g} at {f.point} witness={json.dumps(f.witness)}")
        for f in self.lowdim_image:
            lines.append(f"image layer={f.layer} dim={f.dimension} deficiency={f.deficiency} "
                         f"samples={f.n_samples} witness={json.dumps(f.witness)}")
        return "\n".join(lines) if lines else "no findings"


# ---------------------------------------------------------------- detectors

def _domain_samples(n0: int, n: int, seed: int, tag: str) -> np.ndarray:
    # half near the origin, half far out, so unbounded regions get visited
    rng = keyed_rng(seed, tag)
    X = rng.standard_normal((n, n0))
    X[n // 2:] *= 10.0
    return X


def detect_stably_unactivated(params: Network, margin: float = DEFAULT_MARGIN, seed: int = 0,
                              n_samples: int = DEAD_SAMPLES) -> list[DeadNeuron]:
    """Hidden neurons of layer >= 2 that stay off.

    Orthant separation: every incoming weight and the bias are <= -margin, so
    the positive half-space misses the non-negative orthant even after small
    perturbations.  Otherwise the neuron is flagged "sampled" when its
    pre-activation is < -margin on every one of ``n_samples`` domain points.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    arch = params.arch
    out = []
    X = _domain_samples(arch.n_in, n_samples, seed, "dead_census") if n_samples else None
    Z = params.preactivations(X) if X is not None else None
    for ell in range(2, arch.depth):
        W, b = params.weights[ell - 1], params.bias(ell)
        for i in range(arch.widths[ell]):
            if np.all(W[i] <= -margin) and b[i] <= -margin:
                out.append(DeadNeuron(ell, i, "orthant-separation", margin,
                                      _witness(params, None, layer=ell, neuron=i)))
            elif Z is not None and np.all(Z[ell - 1][:, i] < -margin):
                out.append(DeadNeuron(ell, i, "sampled", margin,
                                      _witness(params, seed, layer=ell, neuron=i, n_samples=n_samples)))
    return out


def detect_never_coactive(params: Network, bbox=None, seed: int = 0,
                          n_samples: int = CENSUS_SAMPLES) -> list[CoactivityFinding]:
    """Adjacent hidden neurons that are never both active.

    For n_0 <= 3 the regions in ``bbox`` are enumerated and the answer is
    exact there; otherwise a sample census decides and findings say "sampled".
    """
    arch = params.arch
    off = [arch.neuron_offset(ell) for ell in range(1, arch.depth + 1)]
    if arch.n_in <= MAX_INPUT_DIM:
        regions = enumerate_regions(params, bbox=bbox, seed=seed)
        S = np.array([r.pattern.flat for r in regions], dtype=np.int8)
        evidence, n = "region-enumeration", len(regions)
        wit_seed = seed
    else:
        X = _domain_samples(arch.n_in, n_samples, seed, "coactive_census")
        S = label_batch(params, X)
        evidence, n = "sampled", n_samples
        wit_seed = seed
    out = []
    for ell in range(1, arch.depth - 1):
        A = S[:, off[ell - 1]:off[ell - 1] + arch.widths[ell]] == 1
        B = S[:, off[ell]:off[ell] + arch.widths[ell + 1]] == 1
        co = A.T.astype(np.int64) @ B.astype(np.int64)
        for i, j in zip(*np.nonzero(co == 0)):
            out.append(CoactivityFinding(ell, int(i), int(j), evidence, n,
                                         _witness(params, wit_seed, layer=ell, i=int(i), j=int(j))))
    return out


def detect_collapse(params: Network, bbox=None, seed: int = 0, regions=None,
                    atol: float = COLLAPSE_ATOL) -> list[CollapseFinding]:
    """Adjacent regions whose full-network affine maps agree to ``atol``.

    The separating fold is then invisible in the function, which is direct
    evidence against the linear regions assumption.
    """
    arch = params.arch
    if arch.n_in > MAX_INPUT_DIM:
        raise ValueError(f"collapse detection needs n_0 <= {MAX_INPUT_DIM}")
    if regions is None:
        regions = enumerate_regions(params, bbox=bbox, seed=seed)
    by_key = {r.key: r for r in regions}
    out = []
    for r in regions:
        for q, nk in sorted(r.neighbors.items()):
            if nk <= r.key or nk not in by_key:
                continue
            layer, i = arch.neuron_index[q]
            if layer == arch.depth:
                continue    # the output is affine: its zero set is not a fold of F
            o = by_key[nk]
            diff = max(float(np.max(np.abs(r.affine_map[0] - o.affine_map[0]))),
                       float(np.max(np.abs(r.affine_map[1] - o.affine_map[1]))))
            if diff <= atol:
                out.append(CollapseFinding(str(r.pattern), str(o.pattern), layer, i, diff,
                                           r.witness.tolist(),
                                           _witness(params, seed, layer=layer, neuron=i,
                                                    region=str(r.pattern))))
    return out


def _affine_rank(Y: np.ndarray, rel_tol: float) -> int:
    C = Y - Y.mean(axis=0)
    s = np.linalg.svd(C, compute_uv=False)
    scale = max(float(np.max(np.abs(Y))), 1.0)
    if s.size == 0 or s[0] <= 1e-12 * scale * np.sqrt(len(Y)):
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def detect_lowdim_image(params: Network, layer: int, samples=None, seed: int = 0,
                        rel_tol: float = 1e-9) -> tuple[int, int]:
    """(dimension, deficiency) of the affine hull of the layer-``layer`` image.

    ``samples`` is an input array or a count (default 10 n_l, the minimum).
    """
    arch = params.arch
    _check_hidden(arch, layer)
    n_l = arch.widths[layer]
    if samples is None:
        samples = 10 * n_l
    if np.isscalar(samples):
        X = _domain_samples(arch.n_in, int(samples), seed, "image_census")
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(X) < 10 * n_l:
        raise ValueError(f"need at least {10 * n_l} samples, got {len(X)}")
    dim = _affine_rank(params.layer_image(X, layer), rel_tol)
    return dim, n_l - dim


def analyze_mechanisms(params: Network, seed: int = 0, margin: float = DEFAULT_MARGIN, bbox=None,
                       n_image_samples: int | None = None) -> MechanismReport:
    arch = params.arch
    rep = MechanismReport(
        stably_unactivated=detect_stably_unactivated(params, margin, seed),
        never_coactive=detect_never_coactive(params, bbox=bbox, seed=seed))
    if arch.n_in <= MAX_INPUT_DIM:
        rep.collapse = detect_collapse(params, bbox=bbox, seed=seed)
    for ell in range(1, arch.depth):
        n = n_image_samples or max(1000, 10 * arch.widths[ell])
        dim, defi = detect_lowdim_image(params, ell, n, seed)
        rep.lowdim_image.append(ImageDimension(ell, dim, defi, n,
                                               _witness(params, seed, layer=ell, n_samples=n)))
    return rep


# ---------------------------------------------------------------- rotations

@dataclass(frozen=True)
class Hyperplane:
    """{y : normal . (y - point) = 0}."""
    normal: np.ndarray
    point: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        _, _, vt = np.linalg.svd(n[None])
        return vt[1:].T


@dataclass(frozen=True)
class AffineSubspace:
    """point + span(columns of basis)."""
    point: np.ndarray
    basis: np.ndarray


def rotate_neuron_family(params: Network, layer: int, neuron: int, S, t: float,
                         o=None, anchor=None) -> Network:
    """Rotate a neuron's hyperplane about its intersection with S.

    The layer form w.y + b becomes (w + t o).y + b - t (anchor . o), which
    equals the old form at every point of S.  ``o`` must be orthogonal to S
    (it defaults to the normal of a Hyperplane S) and ``anchor`` must lie on
    both S and the neuron's hyperplane (it defaults to S's point).
    """
    arch = params.arch
    if not (1 <= layer <= arch.depth):
        raise SymmetryError(f"layer {layer} out of range")
    W, b = params.weights[layer - 1], params.bias(layer)
    n_in = W.shape[1]
    if o is None:
        if not isinstance(S, Hyperplane):
            raise SymmetryError("o is required when S is not a hyperplane")
        o = S.normal
    o = np.asarray(o, dtype=np.float64)
    s_H = np.asarray(S.point if anchor is None else anchor, dtype=np.float64)
    if o.shape != (n_in,) or s_H.shape != (n_in,):
        raise SymmetryError(f"o and anchor must live in R^{n_in}")
    no = np.linalg.norm(o)
    if no == 0:
        raise SymmetryError("o must be nonzero")
    basis = np.asarray(S.basis, dtype=np.float64).reshape(n_in, -1)
    if basis.size and np.max(np.abs(basis.T @ o)) > ORTHO_TOL * no * max(1.0, np.max(np.abs(basis))):
        raise SymmetryError("o is not orthogonal to S")
    rel = s_H - np.asarray(S.point, dtype=np.float64)
    if basis.size:
        rel = rel - basis @ np.linalg.lstsq(basis, rel, rcond=None)[0]
    if np.linalg.norm(rel) > ORTHO_TOL * (1.0 + np.linalg.norm(s_H)):
        raise SymmetryError("anchor does not lie on S")
    w = W[neuron]
    if abs(w @ s_H + b[neuron]) > ORTHO_TOL * (1.0 + np.linalg.norm(w) * np.linalg.norm(s_H) + abs(b[neuron])):
        raise SymmetryError("anchor does not lie on the neuron's hyperplane")
    if t == 0:
        return params
    if layer == arch.depth and not arch.output_bias and float(s_H @ o) != 0.0:
        raise SymmetryError("rotating an output row off the origin needs an output bias")
    Ws = [M.copy() for M in params.weights]
    bs = [params.bias(ell).copy() for ell in range(1, arch.depth + 1)]
    Ws[layer - 1][neuron] = w + t * o
    bs[layer - 1][neuron] = b[neuron] - t * float(s_H @ o)
    return Network(arch, Ws, bs if arch.output_bias else bs[:-1])


def fiber_witness_check(params_a: Network, params_b: Network, n_samples: int = 1000,
                        seed: int = 0, atol: float = FIBER_ATOL) -> bool:
    """True iff the two networks agree to ``atol`` on standard-normal inputs."""
    if params_a.arch.widths != params_b.arch.widths:
        raise ArchitectureMismatchError(f"{params_a.arch} vs {params_b.arch}")
    X = keyed_rng(seed, "fiber").standard_normal((n_samples, params_a.arch.n_in))
    return bool(np.max(np.abs(params_a(X) - params_b(X))) < atol)


__all__ = [
    "SymmetryAction", "SymmetryError", "ArchitectureMismatchError", "apply_permutation", "apply_scaling",
    "DeadNeuron", "CoactivityFinding", "CollapseFinding", "ImageDimension", "MechanismReport",
    "detect_stably_unactivated", "detect_never_coactive", "detect_collapse", "detect_lowdim_image",
    "analyze_mechanisms", "Hyperplane", "AffineSubspace", "rotate_neuron_family", "fiber_witness_check",
]
