"""Batch experiments: fdim distributions over random initialisations.

Each trial draws a He-initialised network from a seed derived from
(base seed, architecture, trial index) and estimates its functional
dimension, so trials are independent of execution order.  With an output
directory, finished trials are appended to ``trials.jsonl`` and a rerun
skips them.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .jacobian import DEFAULT_REL_TOL, estimate_fdim, fdim_upper_bound, rank_at_sample_counts
from .network import Architecture, he_init
from .rng import derive_seed

log = logging.getLogger(__name__)

THREADS_ENV = "RELUSYM_THREADS"
TRIALS_FILE = "trials.jsonl"
MODES = ("input-equals-width", "fixed-input")


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def grid_architectures(depths, widths, mode: str = "input-equals-width", n_input: int = 5,
                       n_out: int = 1) -> list[Architecture]:
    """Depth-d architectures with d-1 hidden layers of equal width."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = []
    for d in depths:
        if d < 2:
            raise ValueError("depth must be at least 2")
        for w in widths:
            n0 = w if mode == "input-equals-width" else n_input
            out.append(Architecture((n0,) + (w,) * (d - 1) + (n_out,)))
    return out


@dataclass
class SweepConfig:
    architectures: list[Architecture]
    trials: int = 1000
    m_multiplier: int = 100
    rel_tol: float = DEFAULT_REL_TOL
    seed: int = 0
    threads: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.architectures = [a if isinstance(a, Architecture) else Architecture(a)
                              for a in self.architectures]
        if not self.architectures:
            raise ValueError("no architectures")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.m_multiplier < 1:
            raise ValueError("m_multiplier must be >= 1")

    @classmethod
    def grid(cls, depths, widths, mode: str = "input-equals-width", n_input: int = 5, **kw) -> "SweepConfig":
        return cls(grid_architectures(depths, widths, mode, n_input), **kw)


def trial_seed(base: int, arch: Architecture, index: int) -> int:
    return derive_seed(base, "trial", len(arch.widths), *arch.widths, index)


@dataclass(frozen=True)
class TrialRecord:
    arch: str
    index: int
    seed: int
    rank: int
    upper_bound: int
    resampled: int
    wall_ms: float

    def same_outcome(self, other) -> bool:
        a, b = asdict(self), asdict(other)
        a.pop("wall_ms")
        b.pop("wall_ms")
        return a == b


@dataclass
class ArchResult:
    arch: str
    upper_bound: int
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.records)

    @property
    def histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(r.rank for r in self.records).items()))

    @property
    def fraction_at_max(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.rank == self.upper_bound for r in self.records) / len(self.records)


@dataclass
class SweepResult:
    per_arch: dict[str, ArchResult]

    def __getitem__(self, arch) -> ArchResult:
        return self.per_arch[str(arch)]

    def summary(self) -> dict:
        return {k: {"upper_bound": v.upper_bound, "trials": v.trials,
                    "fraction_at_max": v.fraction_at_max,
                    "histogram": {str(r): c for r, c in v.histogram.items()}}
                for k, v in self.per_arch.items()}

    def outcome_key(self):
        """Everything except wall times; equal for equal configs."""
        return {k: [(r.index, r.seed, r.rank, r.upper_bound, r.resampled) for r in v.records]
                for k, v in self.per_arch.items()}


def _run_trial(job) -> TrialRecord:
    widths, index, seed, m_mult, rel_tol = job
    arch = Architecture(widths)
    t0 = time.perf_counter()
    net = he_init(arch, seed)
    est = estimate_fdim(net, m_multiplier=m_mult, seed=seed, rel_tol=rel_tol)
    return TrialRecord(str(arch), index, seed, est.rank, est.upper_bound, est.resampled,
                       round(1e3 * (time.perf_counter() - t0), 3))


def _load_records(path: Path) -> dict[tuple[str, int], TrialRecord]:
    done = {}
    if not path.exists():
        return done
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = TrialRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError):
                # a run killed mid-write leaves a partial last line
                log.warning("skipping unreadable trial record in %s", path)
                continue
            done[(rec.arch, rec.index)] = rec
    return done


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        for j in jobs:
            yield fn(j)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * threads)))


def run_sweep(config: SweepConfig, progress=None) -> SweepResult:
    """Run every (architecture, trial) pair, resuming from ``out_dir/trials.jsonl``."""
    threads = config.threads or default_threads()
    done: dict[tuple[str, int], TrialRecord] = {}
    sink = None
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / TRIALS_FILE
        done = _load_records(path)
        sink = path.open("a", encoding="utf-8")
    jobs = []
    for arch in config.architectures:
        for i in range(config.trials):
            s = trial_seed(config.seed, arch, i)
            old = done.get((str(arch), i))
            if old is not None and old.seed == s:
                continue
            jobs.append((arch.widths, i, s, config.m_multiplier, config.rel_tol))
    if done and jobs:
        log.info("resuming: %d trials done, %d to run", len(done), len(jobs))
    try:
        for n, rec in enumerate(_map(_run_trial, jobs, threads), 1):
            done[(rec.arch, rec.index)] = rec
            if sink is not None:
                sink.write(json.dumps(asdict(rec)) + "\n")
                sink.flush()
            if progress is not None:
                progress(n, len(jobs))
    finally:
        if sink is not None:
            sink.close()
    per = {}
    for arch in config.architectures:
        res = ArchResult(str(arch), fdim_upper_bound(arch))
        res.records = [done[(str(arch), i)] for i in range(config.trials)]
        per[str(arch)] = res
    return SweepResult(per)


# ----------------------------------------------------------------- analysis

@dataclass(frozen=True)
class Peak:
    value: int
    height: float
    spacing: int | None     # distance to the next higher peak, None for the top one


def mode_gap_analysis(histogram, window: int = 3, prominence: float = 0.01,
                      n_trials: int | None = None) -> list[Peak]:
    """Modes of the smoothed histogram, highest fdim first, with their spacings.

    ``histogram`` maps fdim value to count (or is an ArchResult).  A bin
    survives when its moving average over ``window`` bins is a local maximum
    of height at least ``prominence`` times the number of trials; the peak is
    then placed on the tallest raw bin inside its window.
    """
    if isinstance(histogram, ArchResult):
        histogram = histogram.histogram
    if not histogram:
        raise ValueError("empty histogram")
    lo, hi = min(histogram), max(histogram)
    raw = np.zeros(hi - lo + 1 + 2 * window)
    for v, c in histogram.items():
        raw[v - lo + window] = c
    total = n_trials or raw.sum()
    sm = np.convolve(raw, np.ones(window) / window, mode="same")
    idx, _ = find_peaks(sm, height=prominence * total)
    half = window // 2
    vals = []
    for p in idx:
        a, b = max(p - half, 0), min(p + half + 1, len(raw))
        q = a + int(np.argmax(raw[a:b]))
        v = int(q - window + lo)
        if v not in vals:
            vals.append(v)
    vals.sort(reverse=True)
    peaks = []
    for k, v in enumerate(vals):
        peaks.append(Peak(v, float(raw[v - lo + window]), None if k == 0 else int(vals[k - 1] - v)))
    return peaks


@dataclass
class MCurve:
    arch: str
    multipliers: list[int]
    fractions: list[float]
    ranks: list[list[int]]          # per trial, one rank per multiplier

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.fractions, self.fractions[1:]))


def _run_m_trial(job):
    widths, index, seed, counts, rel_tol = job
    net = he_init(Architecture(widths), seed)
    ub = fdim_upper_bound(net.arch)
    ranks, _, _ = rank_at_sample_counts(net, counts, seed, rel_tol, cap=ub)
    return index, ranks


def m_sensitivity(arch, multipliers, trials: int, seed: int = 0, rel_tol: float = DEFAULT_REL_TOL,
                  threads: int | None = None) -> MCurve:
    """fraction_at_max per multiplier; trials share parameters and sample streams."""
    arch = arch if isinstance(arch, Architecture) else Architecture(arch)
    mults = [int(m) for m in multipliers]
    if not mults or mults != sorted(mults) or mults[0] < 1:
        raise ValueError("multipliers must be positive and ascending")
    ub = fdim_upper_bound(arch)
    counts = [m * ub for m in mults]
    jobs = [(arch.widths, i, trial_seed(seed, arch, i), counts, rel_tol) for i in range(trials)]
    ranks = [None] * trials
    for i, r in _map(_run_m_trial, jobs, threads or default_threads()):
        ranks[i] = r
    R = np.array(ranks)
    return MCurve(str(arch), mults, [float(np.mean(R[:, k] == ub)) for k in range(len(mults))],
                  [list(map(int, r)) for r in ranks])


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> float:
    """z statistic for p1 > p2 under the pooled two-proportion test."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0
    return (k1 / n1 - k2 / n2) / se


# ------------------------------------------------------------------- output

def _check_nonempty(result: SweepResult):
    if not result.per_arch or not any(v.records for v in result.per_arch.values()):
        raise ValueError("sweep result is empty; nothing to export")


def csv_text(result: SweepResult) -> str:
    _check_nonempty(result)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arch", "index", "seed", "rank", "upper_bound", "resampled", "wall_ms"])
    for key in sorted(result.per_arch):
        for r in sorted(result.per_arch[key].records, key=lambda r: r.index):
            w.writerow([r.arch, r.index, r.seed, r.rank, r.upper_bound, r.resampled, f"{r.wall_ms:.3f}"])
    return buf.getvalue()


def summary_text(result: SweepResult) -> str:
    _check_nonempty(result)
    return json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"


def export(result: SweepResult, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write trials.csv and/or summary.json; identical results give identical bytes."""
    _check_nonempty(result)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in formats:
        if f == "csv":
            p = out / "trials.csv"
            p.write_text(csv_text(result), encoding="utf-8")
        elif f == "json":
            p = out / "summary.json"
            p.write_text(summary_text(result), encoding="utf-8")
        else:
            raise ValueError(f"unknown export format {f!r}")
        written.append(p)
    return written


def histogram_svg(res: ArchResult, width: int = 480, height: int = 300) -> str:
    """Bar chart of fractions per fdim value; the dot marks fraction_at_max."""
    if not res.records:
        raise ValueError("no trials to plot")
    hist = res.histogram
    lo = min(min(hist), res.upper_bound - 1)
    hi = res.upper_bound
    n = res.trials
    ymax = max(max(hist.values()) / n, res.fraction_at_max, 1e-9)
    ml, mb, mt = 40, 30, 24
    pw, ph = width - ml - 10, height - mb - mt
    bw = pw / (hi - lo + 1)

    def xp(v):
        return ml + (v - lo) * bw

    def yp(f):
        return mt + ph * (1 - f / ymax)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="15">{res.arch}: {n} trials, upper bound {hi}, '
           f'at max {res.fraction_at_max:.3f}</text>']
    for v, c in hist.items():
        f = c / n
        out.append(f'<rect class="bar" x="{xp(v):.2f}" y="{yp(f):.2f}" width="{max(bw - 1, 0.5):.2f}" '
                   f'height="{ph * f / ymax:.2f}" fill="#4a78b5"><title>{v}: {c}</title></rect>')
    out.append(f'<circle class="at-max" cx="{xp(hi) + bw / 2:.2f}" cy="{yp(res.fraction_at_max):.2f}" '
               f'r="4" fill="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    for v in (lo, hi):
        out.append(f'<text x="{xp(v):.2f}" y="{mt + ph + 14}">{v}</text>')
    out.append(f'<text x="2" y="{mt + 8}">{ymax:.2f}</text>')
    out += ["</svg>", ""]
    return "\n".join(out)


def plot_histograms(result: SweepResult, out_dir) -> list[Path]:
    _check_nonempty(result)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for key in sorted(result.per_arch):
        p = out / f"hist_{key.replace(',', '-').replace('(', '').replace(')', '').replace(' ', '')}.svg"
        p.write_text(histogram_svg(result.per_arch[key]), encoding="utf-8")
        paths.append(p)
    return paths


__all__ = ["SweepConfig", "SweepResult", "ArchResult", "TrialRecord", "run_sweep", "grid_architectures",
           "trial_seed", "mode_gap_analysis", "Peak", "m_sensitivity", "MCurve", "two_proportion_z",
           "export", "csv_text", "summary_text", "histogram_svg", "plot_histograms", "default_threads"]
