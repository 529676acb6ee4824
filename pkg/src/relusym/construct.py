"""Parameters with no hidden symmetries: inductive construction and certification.

The construction follows the layer-by-layer induction for architectures with
every width at least n_0 = k:

* layer 1 is a generic arrangement; a far unbounded k-cell S_1 is picked and
  the neurons are reordered and co-oriented so the first k are active on it;
* every later layer is a bundle of positive-axis hyperplanes, cloned through
  (nearly) a common anchor x_l that sits deep in the chain cell S_{l-1} at
  distance R from the previous anchor along an interior recession direction.
  R grows geometrically until every adjacent-layer pair of bent hyperplanes
  has a witnessed transverse intersection;
* the next chain cell S_l is the cell of the new bundle around that
  recession direction, again co-oriented to (+^k, -^rest).

Placing the anchor along a recession direction of the chain cell is the
cone translation: it moves the new layer's intersection points into the
image cone by setting the biases of the last two layers.

The output layer needs a bias for its positive-axis hyperplanes, so the
result always has ``arch.output_bias`` set.
"""
from __future__ import annotations

import itertools

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .jacobian import FdimEstimate, estimate_fdim, fdim_upper_bound
from .lp import chebyshev_center
from .network import Architecture, Network, TernaryLabel, as_arch
from .regions import (
    EmptyCellError, LraReport, TpicReport, as_bbox, check_lra_near_intersections, check_tpic,
    pattern_forms,
)
from .rng import keyed_rng

log = logging.getLogger(__name__)

CLONE_SPREAD = 1e-2
FINAL_PERTURBATION = 1e-6
MAX_GROWTH = 60
MAX_ATTEMPTS = 8
TARGET_RADIUS = 4.0
OUTPUT_STAGGER = 0.5


class WidthConditionError(ValueError):
    pass


class ConstructionError(RuntimeError):
    def __init__(self, msg, failing=None):
        super().__init__(msg)
        self.failing = failing


def positive_axis_hyperplane(dim: int, seed: int, bias_scale: float, index: int = 0):
    """Weights iid uniform in [0.5, 1.5] and bias -bias_scale."""
    if dim < 1:
        raise ValueError("dim must be positive")
    if bias_scale <= 0:
        raise ValueError("bias_scale must be positive")
    w = keyed_rng(seed, "positive_axis", index).uniform(0.5, 1.5, size=dim)
    return w, -float(bias_scale)


# ------------------------------------------------------------------ records

@dataclass
class LayerRecord:
    layer: int
    anchor: np.ndarray
    direction: np.ndarray
    scale: float
    growth_iterations: int
    flipped: list[int]
    order: list[int]
    angular_depth: float
    clone_spread: float = CLONE_SPREAD

    def to_dict(self):
        return {"layer": self.layer, "anchor": self.anchor.tolist(),
                "direction": self.direction.tolist(), "scale": self.scale,
                "growth_iterations": self.growth_iterations, "flipped": self.flipped,
                "order": self.order, "angular_depth": self.angular_depth,
                "clone_spread": self.clone_spread}


@dataclass
class ConstructionState:
    arch: Architecture
    seed: int
    attempt: int = 0
    layers: list[LayerRecord] = field(default_factory=list)
    chain: list[dict] = field(default_factory=list)
    perturbations: list[dict] = field(default_factory=list)
    normalization: dict = field(default_factory=dict)

    def to_dict(self):
        return {"arch": list(self.arch.widths), "output_bias": self.arch.output_bias,
                "seed": self.seed, "attempt": self.attempt,
                "layers": [r.to_dict() for r in self.layers], "chain": self.chain,
                "perturbations": self.perturbations, "normalization": self.normalization}

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class CertificationReport:
    tpic: TpicReport
    lra: LraReport
    fdim: FdimEstimate

    @property
    def lra_pass(self) -> bool:
        return self.lra.passed

    @property
    def upper_bound_attained(self) -> bool:
        return self.fdim.rank == self.fdim.upper_bound

    @property
    def certified(self) -> bool:
        return self.tpic.overall_pass and self.lra_pass and self.upper_bound_attained

    def summary(self) -> str:
        lines = [f"tpic: {'pass' if self.tpic.overall_pass else 'FAIL'} "
                 f"({self.tpic.n_witnessed}/{len(self.tpic.pairs)} pairs witnessed)",
                 f"lra near intersections: {'pass' if self.lra_pass else 'FAIL'}",
                 f"fdim: {self.fdim.rank} / upper bound {self.fdim.upper_bound}",
                 f"certified: {self.certified}"]
        for p in self.tpic.failing():
            lines.append(f"  failing pair layer {p.layer} ({p.i},{p.j}): {p.reason}")
        for k, ok in sorted(self.lra.per_pair.items()):
            if not ok:
                lines.append(f"  LRA fails at pair layer {k[0]} ({k[1]},{k[2]})")
        return "\n".join(lines)

    def to_dict(self):
        return {"certified": self.certified, "tpic": self.tpic.to_dict(),
                "lra_pass": self.lra_pass,
                "lra_failures": [list(k) for k, ok in sorted(self.lra.per_pair.items()) if not ok],
                "fdim": self.fdim.to_dict(), "upper_bound_attained": self.upper_bound_attained}


# ------------------------------------------------------------------ helpers

def _partial(Ws, bs, widths):
    return Network(Architecture(widths, True), Ws, bs)


def _unit(v):
    return v / np.linalg.norm(v)


def _cone_center(N, s, ref):
    """Direction d maximising the angular margin min_q s_q N_q.d / |N_q| with ref.d = 1."""
    Nn = N / np.linalg.norm(N, axis=1, keepdims=True)
    k = N.shape[1]
    A = np.vstack([-(s[:, None] * Nn), np.eye(k), -np.eye(k)])
    b = np.concatenate([np.zeros(len(s)), np.full(2 * k, 4.0)])
    cen = chebyshev_center(A, b, A_eq=ref[None], b_eq=[1.0], r_max=4.0)
    if cen is None:
        return None, 0.0
    d = _unit(cen.x)
    return d, float(np.min((s[:, None] * Nn) @ d))


def _chain_rows(net, pattern, upto):
    """Normals and signs of all neurons in layers 1..upto on the chain cell."""
    G, c = pattern_forms(net, pattern)
    n = net.arch.neuron_offset(upto + 1)
    return G[:n], c[:n], np.asarray(pattern[:n])


def _bbox_for(points, pad=5.0):
    r = max(float(np.max(np.abs(np.asarray(points)))) * 10.0, 1.0) + pad
    return r


def _reorient(W, b, s, k, N, v):
    """Pick k neurons to be active on the chain cell (largest margins first),
    negate rows so signs become (+^k, -^rest), and reorder them first."""
    margin = np.abs(N @ v) / np.linalg.norm(N, axis=1)
    order = list(np.argsort(-margin, kind="stable"))
    # keep the k chosen normals well conditioned
    chosen = []
    for q in order:
        trial = chosen + [q]
        if np.linalg.matrix_rank(N[trial], tol=1e-8 * np.max(np.abs(N))) == len(trial):
            chosen = trial
        if len(chosen) == k:
            break
    rest = [q for q in range(len(s)) if q not in chosen]
    perm = chosen + rest
    flipped = [int(q) for q in perm[:k] if s[q] < 0] + [int(q) for q in perm[k:] if s[q] > 0]
    sign = np.ones(len(s))
    sign[flipped] = -1.0
    W2 = (W * sign[:, None])[perm]
    b2 = (b * sign)[perm]
    return W2, b2, [int(q) for q in perm], sorted(flipped)


def _pairs_ok(net, layer, bbox, seed):
    rep = check_tpic(net, bbox=bbox, seed=seed)
    bad = [p for p in rep.pairs if p.layer == layer and not (p.nonempty and p.transversal)]
    good = [p for p in rep.pairs if p.layer == layer and p.nonempty and p.transversal]
    return not bad, bad, good


def _n_alive(net, witnesses, upto):
    """Pairs with a witness where every layer 1..upto keeps a strictly active
    neuron; the neurons on the witness folds sit at zero and never count."""
    alive = 0
    for pts in witnesses:
        X = np.asarray(pts)
        Z = net.preactivations(X)
        ok = np.ones(len(X), dtype=bool)
        for m in range(upto):
            z = Z[m]
            tol = 1e-7 * (1.0 + np.max(np.abs(z), axis=1))
            ok &= np.any(z > tol[:, None], axis=1)
        alive += bool(np.any(ok))
    return alive


def _orient_options(G, sg, N, v, k, rng, n_dirs=2048):
    """Chain cells of the new bundle inside the current recession cone.

    Yields (signs, direction, angular margin) for every cell hit by sampled
    directions that satisfy the earlier chain constraints."""
    if k == 2:
        t = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
        D = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        D = rng.standard_normal((n_dirs, k))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
    D = np.vstack([v[None], D])
    inside = np.all((D @ G.T) * sg > 0, axis=1)
    D = D[inside]
    S = np.sign(D @ N.T)
    D, S = D[np.all(S != 0, axis=1)], S[np.all(S != 0, axis=1)]
    rows = np.vstack([G, N])
    seen = {}
    for d, s in zip(D, S):
        key = tuple(s.astype(int))
        if key not in seen:
            seen[key] = d
    out = []
    for key, d in seen.items():
        s = np.asarray(key, dtype=float)
        c, theta = _cone_center(rows, np.concatenate([sg, s]), d)
        if c is not None and theta > 1e-4:
            out.append((s, c, theta))
    return out


def _choose_orientation(Ws, bs, widths, Wl, bl, G, sg, N, v, k, witnesses, rng):
    """Pick the chain cell and the k active neurons of a new hidden layer.

    A bundle through one point always leaves some direction where the whole
    layer is off, so the choice steers that cone away from the witnesses:
    options keeping an active neuron per layer at more pairs win, ties go to
    the deeper cell."""
    best = None
    tol = 1e-8 * np.max(np.abs(N))
    for s, c, theta in _orient_options(G, sg, N, v, k, rng):
        for P in itertools.combinations(range(len(s)), k):
            if np.linalg.matrix_rank(N[list(P)], tol=tol) < k:
                continue
            rest = [q for q in range(len(s)) if q not in P]
            perm = list(P) + rest
            sigma = s.copy()
            sigma[rest] = -sigma[rest]
            W2 = (Wl * sigma[:, None])[perm]
            b2 = (bl * sigma)[perm]
            net = _partial(Ws + [W2], bs + [b2], widths)
            score = (_n_alive(net, witnesses, len(Ws) + 1), theta)
            if best is None or score > best[0]:
                flipped = sorted(int(q) for q in np.flatnonzero(sigma < 0))
                best = (score, W2, b2, perm, flipped, c)
    if best is None:
        return None
    (_, theta), W2, b2, perm, flipped, c = best
    return W2, b2, [int(q) for q in perm], flipped, c, theta


# ---------------------------------------------------------------- construct

def _build(arch: Architecture, seed: int, attempt: int, spread: float, max_growth: int):
    w = arch.widths
    k = w[0]
    d = arch.depth
    rng = keyed_rng(seed, "construct", attempt)
    state = ConstructionState(arch=arch, seed=seed, attempt=attempt)

    # layer 1: generic arrangement with unit normals
    W1 = rng.standard_normal((w[1], k))
    W1 /= np.linalg.norm(W1, axis=1, keepdims=True)
    b1 = rng.normal(0.0, 1.0, size=w[1])
    u = _unit(rng.standard_normal(k))
    s1 = np.sign(W1 @ u)
    v, theta = _cone_center(W1, s1, u)
    if v is None or theta <= 1e-3:
        raise ConstructionError("layer-1 recession cone is too thin")
    W1, b1, order, flipped = _reorient(W1, b1, s1, k, W1, v)
    Ws, bs = [W1], [b1]
    depth1 = 20.0 * (1.0 + np.max(np.abs(b1)))
    anchor = v * depth1 / theta
    scale = depth1
    state.layers.append(LayerRecord(1, anchor.copy(), v.copy(), float(scale), 0, flipped, order,
                                    float(theta), spread))
    chain = np.array([1] * k + [-1] * (w[1] - k))
    witnesses = []
    net = _partial(Ws, bs, w[:2])
    state.chain.append({"layer": 1, "pattern": str(TernaryLabel.from_flat(net.arch, chain)),
                        "witness": (anchor + scale * v).tolist()})
    if d == 1:
        return net, state

    for ell in range(2, d + 1):
        prev = _partial(Ws, bs, w[:ell])
        G, c, sg = _chain_rows(prev, chain, ell - 1)
        R = 10.0 * spread * scale
        ok = False
        for it in range(max_growth):
            x_l = anchor + R * v
            jit = keyed_rng(seed, "clone", attempt, ell, it)
            Wl = np.empty((w[ell], w[ell - 1]))
            bl = np.empty(w[ell])
            out = ell == d
            if out:
                base, _ = positive_axis_hyperplane(w[ell - 1], seed, 1.0, index=(attempt * 1000 + ell) * 1000)
            for j in range(w[ell]):
                if out:
                    # staggered near-parallel level sets, nearest first
                    wj = base * (1.0 + 0.1 * spread * jit.standard_normal(w[ell - 1]))
                    y = prev.layer_image((x_l + R * OUTPUT_STAGGER * j / max(w[ell] - 1, 1) * v)[None],
                                         ell - 1)[0]
                else:
                    wj, _ = positive_axis_hyperplane(w[ell - 1], seed, 1.0,
                                                     index=(attempt * 1000 + ell) * 1000 + j)
                    xi = spread * R * _unit(jit.standard_normal(k)) * jit.uniform(0.2, 1.0)
                    y = prev.layer_image((x_l + xi)[None], ell - 1)[0]
                Wl[j], bl[j] = wj, -float(wj @ y)
            cand = _partial(Ws + [Wl], bs + [bl], w[:ell + 1])
            box = _bbox_for([x_l, anchor, state.layers[0].anchor])
            ok, bad, good = _pairs_ok(cand, ell - 1, box, seed)
            if ok:
                break
            R *= 2.0
        if not ok:
            p = bad[0]
            raise ConstructionError(
                f"retry budget exhausted at layer {ell}: pair ({p.layer},{p.i})-({p.layer + 1},{p.j}) "
                f"{p.reason}", failing=(p.layer, p.i, p.j))
        # chain cell for the new layer: cell of the bundle around direction v
        on = sg[prev.arch.neuron_offset(ell - 1):] == 1
        Gl_prev = G[prev.arch.neuron_offset(ell - 1):][on]
        N = Wl[:, on] @ Gl_prev
        witnesses.extend([np.array(q.x) for q in p.witnesses] for p in good)
        if ell < d:
            pick = _choose_orientation(Ws, bs, w[:ell + 1], Wl, bl, G, sg, N, v, k, witnesses,
                                       keyed_rng(seed, "orient", attempt, ell))
            if pick is None:
                raise ConstructionError(f"chain cell at layer {ell} has a thin recession cone")
            Wl, bl, order, flipped, v_new, theta = pick
            chain = np.concatenate([chain, [1] * k + [-1] * (w[ell] - k)])
        else:
            # the nearest output stays active beyond its level set, the others
            # are co-oriented toward the anchor: with nested level sets every
            # point then has an active output, which LRA needs at the witnesses
            flipped = list(range(1, w[ell]))
            Wl[1:], bl[1:] = -Wl[1:], -bl[1:]
            v_new, order = v, list(range(w[ell]))
        Ws.append(Wl)
        bs.append(bl)
        anchor, scale, v = x_l, R, v_new
        state.layers.append(LayerRecord(ell, anchor.copy(), v.copy(), float(R), it, flipped, order,
                                        float(theta), spread))
        if ell < d:
            net_l = _partial(Ws, bs, w[:ell + 1])
            wit = anchor + scale * v
            state.chain.append({"layer": ell,
                                "pattern": str(TernaryLabel.from_flat(net_l.arch, chain)),
                                "witness": wit.tolist()})
    return _partial(Ws, bs, w), state


def _normalize(net: Network, state: ConstructionState, seed: int):
    """Affine change of input coordinates putting all witnesses near the
    origin, then unit-norm neuron rows (positive rescaling)."""
    pts = [np.asarray(c["witness"]) for c in state.chain] + [r.anchor for r in state.layers]
    box = _bbox_for(pts)
    rep = check_tpic(net, bbox=box, seed=seed)
    for p in rep.pairs:
        pts.extend(w.x for w in p.witnesses)
    P = np.array(pts)
    center = 0.5 * (P.min(axis=0) + P.max(axis=0))
    radius = float(np.max(np.linalg.norm(P - center, axis=1)))
    s = radius / TARGET_RADIUS
    Ws = [W.copy() for W in net.weights]
    bs = [b.copy() for b in net.biases]
    bs[0] = bs[0] + Ws[0] @ center
    Ws[0] = Ws[0] * s
    # unit rows; compensate the next layer's columns
    for ell in range(net.arch.depth):
        nrm = np.linalg.norm(np.hstack([Ws[ell], bs[ell][:, None]]), axis=1)
        Ws[ell] = Ws[ell] / nrm[:, None]
        bs[ell] = bs[ell] / nrm
        if ell + 1 < net.arch.depth:
            Ws[ell + 1] = Ws[ell + 1] * nrm[None, :]
    out = Network(net.arch, Ws, bs)

    def tr(x):
        return ((np.asarray(x) - center) / s).tolist()

    for c in state.chain:
        c["witness"] = tr(c["witness"])
    for r in state.layers:
        r.anchor = np.asarray(tr(r.anchor))
        r.scale = r.scale / s
    state.normalization = {"center": center.tolist(), "scale": s}
    return out


def check_chain(params: Network, state: ConstructionState) -> bool:
    """Every chain witness still carries (+^k, -^rest) at its layer and all earlier ones."""
    k = params.arch.n_in
    for c in state.chain:
        ell = c["layer"]
        z = params.preactivations(np.asarray(c["witness"])[None])
        for m in range(ell):
            want = np.array([1] * k + [-1] * (params.arch.widths[m + 1] - k))
            if not np.array_equal(np.sign(z[m][0]), want):
                return False
    return True


def construct_no_hidden_symmetry(arch, seed: int = 0, spread: float = CLONE_SPREAD,
                                 perturbation: float = FINAL_PERTURBATION,
                                 max_growth: int = MAX_GROWTH, max_attempts: int = MAX_ATTEMPTS,
                                 certify: bool = True):
    """Build parameters satisfying TPIC and LRA near the intersections.

    Returns (params, state).  Attempts with fresh sub-seeds until the
    certification passes; raises ConstructionError naming the failing pair
    when the budget runs out.
    """
    arch = as_arch(arch)
    w = arch.widths
    if max_growth < 1 or max_attempts < 1:
        raise ValueError("max_growth and max_attempts must be at least 1")
    if any(n < w[0] for n in w[1:]):
        raise WidthConditionError(f"every layer must be at least as wide as the input: {w}")
    if w[0] < 2 and len(w) > 2:
        raise WidthConditionError("pairwise intersections of bent hyperplanes are points meeting "
                                  "points when n_0 = 1; they are generically empty")
    arch = Architecture(w, True)
    last = None
    for attempt in range(max_attempts):
        try:
            net, state = _build(arch, seed, attempt, spread, max_growth)
        except ConstructionError as e:
            last = e
            log.info("construction attempt %d failed: %s", attempt, e)
            continue
        net = _normalize(net, state, seed)
        rng = keyed_rng(seed, "final_perturbation", attempt)
        theta = net.flat
        noise = perturbation * np.sqrt(np.mean(theta ** 2)) * rng.standard_normal(theta.size)
        net = net.with_flat(theta + noise)
        state.perturbations.append({"stage": "final", "relative_size": perturbation,
                                    "key": ["final_perturbation", attempt]})
        if not check_chain(net, state):
            last = ConstructionError("chain witnesses lost their pattern after perturbation")
            continue
        if not certify or w[0] > 3:
            return net, state
        rep = verify_construction(net, seed=seed)
        if rep.certified:
            return net, state
        fail = rep.tpic.failing()
        if fail:
            p = fail[0]
            last = ConstructionError(f"certification failed: pair layer {p.layer} ({p.i},{p.j}) "
                                     f"{p.reason}", failing=p.key)
        else:
            last = ConstructionError("certification failed:\n" + rep.summary())
        log.info("construction attempt %d not certified: %s", attempt, last)
    raise last


# -------------------------------------------------------------- certification

def verify_construction(params: Network, bbox=None, seed: int = 0, m_multiplier: int = 100,
                        rel_tol: float = 1e-6) -> CertificationReport:
    """TPIC, LRA near every witnessed intersection, and fdim at the upper bound."""
    tpic = check_tpic(params, bbox=bbox, seed=seed)
    lra = check_lra_near_intersections(params, tpic)
    fd = estimate_fdim(params, m_multiplier=m_multiplier, seed=seed, rel_tol=rel_tol)
    return CertificationReport(tpic=tpic, lra=lra, fdim=fd)


def image_dimension_probe(params: Network, layer: int, cell_pattern, bbox=None,
                          n_samples: int = 200, seed: int = 0, rel_tol: float = 1e-9) -> int:
    """Affine-hull dimension of F_(layer) over points sampled in a cell.

    ``cell_pattern`` gives signs for the neurons of layers 1..layer (a
    TernaryLabel, its string form, or a flat sequence); a 0 entry pins the
    neuron to its fold.  Points are drawn from the cell's inscribed ball,
    which has the cell's dimension, so the hull dimension is exact.
    """
    arch = params.arch
    if isinstance(cell_pattern, str):
        cell_pattern = TernaryLabel.parse(cell_pattern)
    s = np.asarray(cell_pattern.flat if isinstance(cell_pattern, TernaryLabel) else cell_pattern,
                   dtype=np.int64)
    n = arch.neuron_offset(layer + 1)
    if s.size < n:
        raise ValueError(f"pattern covers {s.size} neurons, layer {layer} needs {n}")
    full = np.zeros(arch.n_neurons, dtype=np.int64)
    full[:n] = s[:n]
    G, c = pattern_forms(params, full)
    lo, hi = as_bbox(bbox, arch.n_in)
    ineq = [q for q in range(n) if full[q] != 0]
    eq = [q for q in range(n) if full[q] == 0]
    A = np.vstack([-(full[ineq, None] * G[ineq]), np.eye(arch.n_in), -np.eye(arch.n_in)])
    b = np.concatenate([full[ineq] * c[ineq], hi, -lo])
    A_eq = G[eq] if eq else None
    b_eq = -c[eq] if eq else None
    cen = chebyshev_center(A, b, A_eq=A_eq, b_eq=b_eq, r_max=float(np.max(hi - lo)))
    if cen is None:
        raise EmptyCellError(f"cell {cell_pattern} has no interior in the bbox")
    rng = keyed_rng(seed, "image_probe", layer)
    dirs = rng.standard_normal((n_samples, arch.n_in))
    if eq:
        _, sv, vt = np.linalg.svd(G[eq])
        r = int(np.sum(sv > 1e-12 * sv[0]))
        B = vt[r:]
        dirs = dirs @ B.T @ B
    nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    X = cen.x + 0.9 * cen.radius * rng.uniform(0, 1, (n_samples, 1)) * dirs / nrm
    Y = params.layer_image(X, layer)
    Yc = Y - Y.mean(axis=0)
    sv = np.linalg.svd(Yc, compute_uv=False)
    scale = max(float(np.max(np.abs(Y))), 1.0)
    return int(np.sum(sv > rel_tol * scale * np.sqrt(n_samples)))
