"""Exact activation regions, bent hyperplanes, genericity, TPIC and LRA checks.

Everything here works in input space for n_0 <= 3.  A region is described
by its per-neuron pre-activation affine forms, which are fixed by the
pattern; halfspaces, witnesses and faces all come from small LPs.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.spatial import HalfspaceIntersection

from .lp import LP_TOL, chebyshev_center
from .network import Network, TernaryLabel
from .rng import keyed_rng

DEFAULT_HALF_WIDTH = 10.0
MAX_INPUT_DIM = 3
MAX_REGIONS = 200_000
GENERICITY_SUBSET_CAP = 200_000


class InputDimensionError(ValueError):
    pass


class InfeasibleBBoxError(ValueError):
    pass


class EmptyCellError(ValueError):
    pass


def as_bbox(bbox, n0: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalise ``None`` / half-width / (lo, hi) / (n0, 2) array to (lo, hi)."""
    if bbox is None:
        bbox = DEFAULT_HALF_WIDTH
    if np.isscalar(bbox):
        h = float(bbox)
        lo, hi = np.full(n0, -h), np.full(n0, h)
    else:
        arr = np.asarray(bbox, dtype=np.float64)
        if arr.shape == (n0, 2):
            lo, hi = arr[:, 0].copy(), arr[:, 1].copy()
        elif arr.shape == (2,):
            lo, hi = np.full(n0, arr[0]), np.full(n0, arr[1])
        elif arr.shape == (2, n0):
            lo, hi = arr[0].copy(), arr[1].copy()
        else:
            raise InfeasibleBBoxError(f"cannot interpret bbox of shape {arr.shape}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
        raise InfeasibleBBoxError("bbox must be finite with lo < hi")
    return lo, hi


def _bbox_constraints(lo, hi):
    n = lo.size
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo])


# ------------------------------------------------------------- affine forms

def _layer_slices(arch):
    out, pos = [], 0
    for n in arch.widths[1:]:
        out.append(slice(pos, pos + n))
        pos += n
    return out


def pattern_forms(params: Network, pattern) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activation forms z_q(x) = G[q] x + c[q] of all neurons under ``pattern``.

    Valid on the closure of the pattern's region.  Entries other than +1
    count as inactive.
    """
    arch = params.arch
    s = np.asarray(pattern.flat if isinstance(pattern, TernaryLabel) else pattern)
    sl = _layer_slices(arch)
    G = np.zeros((arch.n_neurons, arch.n_in))
    c = np.zeros(arch.n_neurons)
    Gp, cp = np.eye(arch.n_in), np.zeros(arch.n_in)
    for ell in range(1, arch.depth + 1):
        W = params.weights[ell - 1]
        Gl = W @ Gp
        cl = W @ cp + params.bias(ell)
        G[sl[ell - 1]] = Gl
        c[sl[ell - 1]] = cl
        on = (s[sl[ell - 1]] == 1)[:, None]
        Gp, cp = np.where(on, Gl, 0.0), np.where(on[:, 0], cl, 0.0)
    return G, c


def region_affine_map(params: Network, pattern, gate_output: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Affine map of the network output on a pattern's region.

    ``gate_output`` zeroes output rows whose sign is not +1; this is the
    map seen by the open-path polynomial when output vertices are gated,
    and is what the LRA check compares.
    """
    G, c = pattern_forms(params, pattern)
    sl = _layer_slices(params.arch)[-1]
    A, off = G[sl].copy(), c[sl].copy()
    if gate_output:
        s = np.asarray(pattern.flat if isinstance(pattern, TernaryLabel) else pattern)[sl]
        A[s != 1] = 0.0
        off[s != 1] = 0.0
    return A, off


def _is_const(g, scale):
    return np.max(np.abs(g)) <= 1e-14 * scale if g.size else True


def _settle(params: Network, s: np.ndarray, from_layer: int, probe: np.ndarray) -> np.ndarray:
    """Fix signs of neurons after ``from_layer`` whose sign is not carried by continuity.

    Constant neurons get the sign of their constant (0 if it vanishes);
    neurons that were constant-zero before and now vary get their sign at
    ``probe`` (a point just inside the new region).
    """
    arch = params.arch
    sl = _layer_slices(arch)
    s = s.copy()
    for ell in range(from_layer + 1, arch.depth + 1):
        G, c = pattern_forms(params, s)
        scale = 1.0 + np.max(np.abs(G)) + np.max(np.abs(c))
        for q in range(sl[ell - 1].start, sl[ell - 1].stop):
            if _is_const(G[q], scale):
                s[q] = 0 if abs(c[q]) <= LP_TOL else int(np.sign(c[q]))
            elif s[q] == 0:
                v = G[q] @ probe + c[q]
                s[q] = 0 if v == 0 else int(np.sign(v))
    return s


def pattern_at(params: Network, x) -> np.ndarray | None:
    """± pattern at x (0 only for constant-zero neurons), None if x is on a fold."""
    x = np.asarray(x, dtype=np.float64)
    s = np.zeros(params.arch.n_neurons, dtype=np.int64)
    sl = _layer_slices(params.arch)
    for ell in range(1, params.arch.depth + 1):
        G, c = pattern_forms(params, s)
        scale = 1.0 + np.max(np.abs(G)) + np.max(np.abs(c))
        for q in range(sl[ell - 1].start, sl[ell - 1].stop):
            z = G[q] @ x + c[q]
            if _is_const(G[q], scale):
                s[q] = 0 if abs(c[q]) <= LP_TOL else int(np.sign(c[q]))
            elif abs(z) <= 1e-9 * scale:
                return None
            else:
                s[q] = int(np.sign(z))
    return s


def _halfspaces(G, c, s, lo, hi, skip=()):
    """Rows of A x <= b for the region of s (plus bbox).  None if a constant
    neuron contradicts its sign."""
    scale = 1.0 + np.max(np.abs(G)) + np.max(np.abs(c))
    rows, rhs, owner = [], [], []
    for q in range(len(s)):
        if q in skip:
            continue
        if _is_const(G[q], scale):
            if s[q] == 0:
                if abs(c[q]) > LP_TOL:
                    return None
            elif s[q] * c[q] <= LP_TOL:
                return None
            continue
        if s[q] == 0:
            return None
        rows.append(-s[q] * G[q])
        rhs.append(s[q] * c[q])
        owner.append(q)
    Ab, bb = _bbox_constraints(lo, hi)
    A = np.vstack([np.array(rows).reshape(-1, G.shape[1]), Ab])
    b = np.concatenate([np.array(rhs, dtype=float), bb])
    return A, b, owner


# ------------------------------------------------------------------ regions

@dataclass
class ActivationRegion:
    pattern: TernaryLabel
    affine_map: tuple[np.ndarray, np.ndarray]
    halfspaces: tuple[np.ndarray, np.ndarray]
    witness: np.ndarray
    radius: float
    facets: tuple[int, ...] = ()
    touches_boundary: bool = False
    fragile: bool = False
    vertices: np.ndarray | None = field(default=None, repr=False)
    forms: tuple[np.ndarray, np.ndarray] = field(default=None, repr=False)
    neighbors: dict = field(default_factory=dict, repr=False)

    @property
    def key(self) -> tuple[int, ...]:
        return self.pattern.flat

    def to_dict(self) -> dict:
        A, off = self.affine_map
        return {"pattern": str(self.pattern), "affine_map": {"matrix": A.tolist(), "offset": off.tolist()},
                "witness": self.witness.tolist(), "radius": self.radius,
                "touches_boundary": self.touches_boundary, "fragile": self.fragile}


def _region_vertices(A, b, witness):
    n = A.shape[1]
    if n == 1:
        a = A[:, 0]
        up = np.min(b[a > 0] / a[a > 0])
        dn = np.max(b[a < 0] / a[a < 0])
        return np.array([[dn], [up]])
    nrm = np.linalg.norm(A, axis=1)
    keep = nrm > 0
    hs = np.hstack([A[keep], -b[keep, None]]) / nrm[keep, None]
    hi = HalfspaceIntersection(hs, witness)
    return hi.intersections


def _build_region(params, s, lo, hi, r_max):
    G, c = pattern_forms(params, s)
    sys = _halfspaces(G, c, s, lo, hi)
    if sys is None:
        return None
    A, b, _ = sys
    cen = chebyshev_center(A, b, r_max=r_max)
    if cen is None:
        return None
    sl = _layer_slices(params.arch)[-1]
    verts = _region_vertices(A, b, cen.x) if params.arch.n_in <= MAX_INPUT_DIM else None
    touches = False
    if verts is not None:
        span = hi - lo
        touches = bool(np.any(np.abs(verts - lo) <= 1e-9 * span) or np.any(np.abs(verts - hi) <= 1e-9 * span))
    return ActivationRegion(
        pattern=TernaryLabel.from_flat(params.arch, s), affine_map=(G[sl].copy(), c[sl].copy()),
        halfspaces=(A, b), witness=cen.x, radius=cen.radius, touches_boundary=touches,
        fragile=cen.fragile, vertices=verts, forms=(G, c))


def _facet_center(params, region, q, lo, hi, r_max):
    G, c = region.forms
    s = np.asarray(region.pattern.flat)
    sys = _halfspaces(G, c, s, lo, hi, skip=(q,))
    if sys is None:
        return None
    A, b, _ = sys
    return chebyshev_center(A, b, A_eq=G[q][None], b_eq=[-c[q]], r_max=r_max)


def _neuron_layer(arch, q):
    return arch.neuron_index[q][0]


def enumerate_regions(params: Network, bbox=None, seed: int = 0) -> list[ActivationRegion]:
    """All ±-activation regions meeting the bbox, sorted by pattern.

    Breadth-first search across facets: a neuron's fold bounds a region when
    the region system with that neuron's equality has an interior point in
    the fold; crossing it flips that sign (and re-derives signs that are not
    fixed by continuity downstream).
    """
    n0 = params.arch.n_in
    if n0 > MAX_INPUT_DIM:
        raise InputDimensionError(f"exact enumeration needs n_0 <= {MAX_INPUT_DIM}, got {n0}")
    lo, hi = as_bbox(bbox, n0)
    r_max = float(np.max(hi - lo))
    rng = keyed_rng(seed, "region_start")
    for _ in range(1000):
        s0 = pattern_at(params, rng.uniform(lo, hi))
        if s0 is not None:
            break
    else:
        raise RuntimeError("could not find a fold-free start point")
    start = _build_region(params, s0, lo, hi, r_max)
    if start is None:
        # start point sits in a sliver; fall back to its own pattern forced deeper
        raise RuntimeError("start region has no interior")
    found = {tuple(s0): start}
    queue = deque([start])
    while queue:
        R = queue.popleft()
        s = np.asarray(R.pattern.flat)
        G, _ = R.forms
        facets = []
        scale = 1.0 + np.max(np.abs(G))
        for q in range(len(s)):
            if s[q] == 0 or _is_const(G[q], scale):
                continue
            fc = _facet_center(params, R, q, lo, hi, r_max)
            if fc is None:
                continue
            facets.append(q)
            t = s.copy()
            t[q] = -t[q]
            ell = _neuron_layer(params.arch, q)
            step = 1e-3 * t[q] * G[q] / np.linalg.norm(G[q])
            t = _settle(params, t, ell, fc.x + step)
            key = tuple(int(v) for v in t)
            R.neighbors[q] = key
            if key in found:
                continue
            Rn = _build_region(params, t, lo, hi, r_max)
            if Rn is None:
                del R.neighbors[q]
                continue
            found[key] = Rn
            queue.append(Rn)
            if len(found) > MAX_REGIONS:
                raise RuntimeError("region count exceeds the enumeration cap")
        R.facets = tuple(facets)
    return [found[k] for k in sorted(found)]


def cell_dim_from_label(label: TernaryLabel, n0: int) -> int:
    """n_0 minus the number of zero entries, floored at -1."""
    return max(n0 - label.n_zeros, -1)


# ---------------------------------------------------------- bent hyperplanes

@dataclass
class BentPiece:
    layer: int
    neuron: int
    points: np.ndarray
    patterns: tuple[str, str]


@dataclass
class BentHyperplaneSet:
    arch: tuple[int, ...]
    bbox: tuple[np.ndarray, np.ndarray]
    pieces: dict[tuple[int, int], list[BentPiece]]

    def neurons_with_pieces(self) -> list[tuple[int, int]]:
        return [k for k, v in self.pieces.items() if v]

    def polylines(self, key, tol: float = 1e-7) -> list[np.ndarray]:
        """Stitch a neuron's 2-D segments into maximal polylines."""
        segs = [p.points for p in self.pieces.get(key, []) if len(p.points) == 2]
        return stitch_segments(segs, tol)


def stitch_segments(segs, tol=1e-7) -> list[np.ndarray]:
    if not segs:
        return []
    scale = max(1.0, max(float(np.max(np.abs(s))) for s in segs))
    q = tol * scale

    def key(p):
        return tuple(np.round(np.asarray(p) / q).astype(np.int64))

    ends: dict = {}
    for i, sgm in enumerate(segs):
        for e in (0, 1):
            ends.setdefault(key(sgm[e]), []).append((i, e))
    used = [False] * len(segs)
    lines = []

    def extend(chain, tail):
        while True:
            nxt = [(i, e) for i, e in ends.get(key(tail), []) if not used[i]]
            if not nxt:
                return chain
            i, e = nxt[0]
            used[i] = True
            tail = segs[i][1 - e]
            chain.append(tail)

    # start from segment ends of odd degree so open chains are not split
    order = sorted(range(len(segs)), key=lambda i: min(len(ends[key(segs[i][0])]), len(ends[key(segs[i][1])])))
    for i in order:
        if used[i]:
            continue
        used[i] = True
        fwd = extend([segs[i][0], segs[i][1]], segs[i][1])
        back = extend([segs[i][0]], segs[i][0])
        lines.append(np.array(back[::-1] + fwd[1:]))
    return lines


def _order_polygon(pts, normal):
    ctr = pts.mean(axis=0)
    u = np.linalg.svd(np.vstack([normal, np.zeros_like(normal)]))[2]
    e1, e2 = u[1], u[2]
    ang = np.arctan2((pts - ctr) @ e2, (pts - ctr) @ e1)
    return pts[np.argsort(ang)]


def _dedupe_points(pts, tol):
    out = []
    for p in pts:
        if all(np.linalg.norm(p - o) > tol for o in out):
            out.append(p)
    return np.array(out)


def bent_hyperplanes(params: Network, bbox=None, regions=None, seed: int = 0) -> BentHyperplaneSet:
    """Pieces of every neuron's zero set inside the bbox.

    Each piece is a face of some region closure where the neuron's form
    vanishes; faces are taken from the region on the neuron's positive side
    so every piece is reported once.
    """
    n0 = params.arch.n_in
    lo, hi = as_bbox(bbox, n0)
    if regions is None:
        regions = enumerate_regions(params, (np.column_stack([lo, hi])), seed)
    arch = params.arch
    pieces = {key: [] for key in arch.neuron_index}
    for R in regions:
        G, c = R.forms
        s = R.pattern.flat
        V = R.vertices
        span = float(np.max(hi - lo))
        for q in R.facets:
            if s[q] != 1:
                continue
            g = G[q]
            val = V @ g + c[q]
            on = V[np.abs(val) <= 1e-9 * (1.0 + np.linalg.norm(g) * span + abs(c[q]))]
            on = _dedupe_points(on, 1e-10 * span)
            if len(on) < n0:
                continue
            if n0 == 2:
                t = on @ np.array([-g[1], g[0]])
                on = on[[int(np.argmin(t)), int(np.argmax(t))]]
            elif n0 == 3:
                on = _order_polygon(on, g)
            t = list(s)
            t[q] = -1
            ell, i = arch.neuron_index[q]
            pieces[(ell, i)].append(BentPiece(ell, i, on, (str(R.pattern), str(TernaryLabel.from_flat(arch, t)))))
    return BentHyperplaneSet(arch=arch.widths, bbox=(lo, hi), pieces=pieces)


# --------------------------------------------------------------- genericity

def _full_rank(M, tol):
    s = np.linalg.svd(M, compute_uv=False)
    return s.size > 0 and s[-1] > tol * s[0] and len(s) == min(M.shape)


def genericity_check(params: Network, tol: float = 1e-9, layers=None) -> list[bool]:
    """Per-layer verdict that the layer's hyperplane arrangement is generic.

    For layer l with input dimension n = n_{l-1}: every min(n_l, n) rows of
    W^l are linearly independent (so any p <= n hyperplanes meet in
    codimension p), and every n+1 rows of [W^l | b^l] are independent (so
    no n+1 hyperplanes share a point).  Rows are normalised first.  Subsets
    larger than the maximal sizes are implied by these two tests.
    """
    out = []
    arch = params.arch
    layers = range(1, arch.depth + 1) if layers is None else layers
    for ell in layers:
        W = params.weights[ell - 1]
        b = params.bias(ell)
        n = W.shape[1]
        Wb = np.hstack([W, b[:, None]])
        nrm = np.linalg.norm(Wb, axis=1, keepdims=True)
        if np.any(np.linalg.norm(W, axis=1) <= tol * np.maximum(nrm[:, 0], 1e-300)):
            out.append(False)
            continue
        Wn = W / nrm
        Wbn = Wb / nrm
        ok = True
        p = min(W.shape[0], n)
        for S in _subsets(W.shape[0], p):
            if not _full_rank(Wn[list(S)], tol):
                ok = False
                break
        if ok and W.shape[0] >= n + 1:
            for S in _subsets(W.shape[0], n + 1):
                if not _full_rank(Wbn[list(S)], tol):
                    ok = False
                    break
        out.append(ok)
    return out


def _subsets(n, k):
    if comb(n, k) > GENERICITY_SUBSET_CAP:
        raise ValueError(f"C({n},{k}) subsets exceed the genericity cap")
    return itertools.combinations(range(n), k)


# --------------------------------------------------------------------- TPIC

@dataclass
class PairWitness:
    x: np.ndarray
    patterns: list[str]
    sigma_ratio: float
    transversal: bool


@dataclass
class PairResult:
    layer: int
    i: int
    j: int
    nonempty: bool
    transversal: bool
    witnesses: list[PairWitness]
    reason: str = ""

    @property
    def key(self):
        return (self.layer, self.i, self.j)

    def to_dict(self):
        return {"layer": self.layer, "i": self.i, "j": self.j, "nonempty": self.nonempty,
                "transversal": self.transversal, "reason": self.reason,
                "witnesses": [{"x": w.x.tolist(), "patterns": w.patterns,
                               "sigma_ratio": w.sigma_ratio} for w in self.witnesses]}


@dataclass
class TpicReport:
    pairs: list[PairResult]
    overall_pass: bool
    regions: list[ActivationRegion] = field(default=None, repr=False)

    def failing(self) -> list[PairResult]:
        return [p for p in self.pairs if not (p.nonempty and p.transversal)]

    @property
    def n_witnessed(self) -> int:
        return sum(1 for p in self.pairs if p.nonempty)

    def to_dict(self):
        return {"overall_pass": self.overall_pass, "pairs": [p.to_dict() for p in self.pairs]}


def check_tpic(params: Network, bbox=None, regions=None, seed: int = 0,
               transversal_tol: float = 1e-9) -> TpicReport:
    """Pairwise intersections of bent hyperplanes from adjacent layers.

    For each region having both neurons as facets, an LP with the two
    equalities finds a point of the intersection inside the region closure.
    Transversality proxy: the two gradients at the witness are independent
    (sigma_min / sigma_max > transversal_tol), so perturbing both equality
    right-hand sides moves the solution continuously (isolated points at
    n_0 = 2, curves at n_0 = 3).
    """
    arch = params.arch
    n0 = arch.n_in
    lo, hi = as_bbox(bbox, n0)
    r_max = float(np.max(hi - lo))
    if regions is None:
        regions = enumerate_regions(params, np.column_stack([lo, hi]), seed)
    offs = [arch.neuron_offset(ell) for ell in range(arch.depth + 2)]
    has_facet = set()
    for R in regions:
        has_facet.update(R.facets)
    hits: dict[tuple[int, int], list[PairWitness]] = {}
    for R in regions:
        G, c = R.forms
        s = np.asarray(R.pattern.flat)
        fset = set(R.facets)
        for a in R.facets:
            la, ia = arch.neuron_index[a]
            if la == arch.depth:
                continue
            for jb in range(arch.widths[la + 1]):
                bq = offs[la + 1] + jb
                if bq not in fset:
                    continue
                sys = _halfspaces(G, c, s, lo, hi, skip=(a, bq))
                if sys is None:
                    continue
                A, b, _ = sys
                cen = chebyshev_center(A, b, A_eq=G[[a, bq]], b_eq=-c[[a, bq]], r_max=r_max)
                if cen is None:
                    continue
                sv = np.linalg.svd(G[[a, bq]], compute_uv=False)
                ratio = float(sv[-1] / sv[0]) if n0 >= 2 and sv[0] > 0 else 0.0
                lst = hits.setdefault((a, bq), [])
                for w in lst:
                    if np.linalg.norm(w.x - cen.x) <= 1e-6 * (1 + np.linalg.norm(cen.x)):
                        w.patterns.append(str(R.pattern))
                        w.sigma_ratio = min(w.sigma_ratio, ratio)
                        w.transversal = w.transversal and ratio > transversal_tol
                        break
                else:
                    lst.append(PairWitness(cen.x, [str(R.pattern)], ratio, ratio > transversal_tol))
    pairs = []
    for ell in range(1, arch.depth):
        for i in range(arch.widths[ell]):
            a = offs[ell] + i
            for j in range(arch.widths[ell + 1]):
                bq = offs[ell + 1] + j
                ws = hits.get((a, bq), [])
                reason = ""
                if not ws:
                    empties = [f"({arch.neuron_index[q][0]},{arch.neuron_index[q][1]})"
                               for q in (a, bq) if q not in has_facet]
                    reason = (f"empty bent hyperplane {' and '.join(empties)}" if empties
                              else "bent hyperplanes do not meet inside the bbox")
                tr = bool(ws) and all(w.transversal for w in ws)
                if ws and not tr:
                    reason = "non-transversal intersection"
                pairs.append(PairResult(ell, i, j, bool(ws), tr, ws, reason))
    overall = all(p.nonempty and p.transversal for p in pairs)
    return TpicReport(pairs=pairs, overall_pass=overall, regions=regions)


# ---------------------------------------------------------------------- LRA

@dataclass
class LraResult:
    layer: int
    i: int
    j: int
    witness: np.ndarray
    passed: bool
    diagnosis: str = ""


@dataclass
class LraReport:
    results: list[LraResult]

    @property
    def per_pair(self) -> dict[tuple[int, int, int], bool]:
        out: dict = {}
        for r in self.results:
            k = (r.layer, r.i, r.j)
            out[k] = out.get(k, False) or r.passed
        return out

    @property
    def passed(self) -> bool:
        return all(self.per_pair.values())

    def __iter__(self):
        return iter(r.passed for r in self.results)


def check_lra_near_intersections(params: Network, tpic: TpicReport, atol: float = 1e-9) -> LraReport:
    """At every pairwise-intersection witness the four surrounding regions
    must carry pairwise distinct output-gated affine maps.  A pair passes
    when at least one of its witnesses does."""
    results = []
    for p in tpic.pairs:
        for w in p.witnesses:
            pats = sorted(set(w.patterns))
            if len(pats) != 4:
                results.append(LraResult(p.layer, p.i, p.j, w.x, False,
                                         f"{len(pats)} adjacent regions found, expected 4"))
                continue
            maps = []
            for t in pats:
                A, off = region_affine_map(params, TernaryLabel.parse(t), gate_output=True)
                maps.append(np.hstack([A, off[:, None]]))
            bad = [(pats[u], pats[v]) for u in range(4) for v in range(u + 1, 4)
                   if np.max(np.abs(maps[u] - maps[v])) <= atol]
            diag = "" if not bad else "equal maps on " + "; ".join(f"{x} / {y}" for x, y in bad)
            results.append(LraResult(p.layer, p.i, p.j, w.x, not bad, diag))
    return LraReport(results)
