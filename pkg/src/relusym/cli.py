"""Command-line entry point: ``relusym <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .network import Architecture, NetworkFormatError, load, save

log = logging.getLogger("relusym")

FULL_SCALE_TRIALS = 5000


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _arch(text: str) -> Architecture:
    try:
        return Architecture.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def cmd_fdim(a) -> int:
    from .jacobian import estimate_fdim
    est = estimate_fdim(load(a.net), m_multiplier=a.m_mult, seed=a.seed, rel_tol=a.tol)
    print(json.dumps(est.to_dict(), indent=2))
    return 0


def cmd_sweep(a) -> int:
    from .harness import SweepConfig, export, mode_gap_analysis, plot_histograms, run_sweep
    trials = a.trials
    if a.full_scale:
        trials = FULL_SCALE_TRIALS
        log.warning("full-scale sweep: %d trials per architecture; deep wide nets take hours",
                    trials)
    cfg = SweepConfig.grid(a.depths, a.widths, mode=a.mode, n_input=a.input, trials=trials,
                           m_multiplier=a.m_mult, rel_tol=a.tol, seed=a.seed, threads=a.threads,
                           out_dir=a.out)

    def progress(n, total):
        if n % 50 == 0 or n == total:
            log.info("%d/%d trials", n, total)

    res = run_sweep(cfg, progress=progress)
    if a.out:
        export(res, a.out)
        plot_histograms(res, a.out)
    for key, r in res.per_arch.items():
        peaks = mode_gap_analysis(r)
        gaps = [p.spacing for p in peaks if p.spacing is not None]
        print(f"{key}: trials={r.trials} upper_bound={r.upper_bound} "
              f"fraction_at_max={r.fraction_at_max:.4f} peaks={[p.value for p in peaks]} gaps={gaps}")
    return 0


def cmd_msweep(a) -> int:
    from .harness import m_sensitivity
    curve = m_sensitivity(a.arch, a.mults, a.trials, seed=a.seed, rel_tol=a.tol, threads=a.threads)
    for m, f in zip(curve.multipliers, curve.fractions):
        print(f"m={m}x fraction_at_max={f:.4f}")
    print(f"monotone: {curve.monotone}")
    if a.out:
        Path(a.out).write_text(json.dumps({"arch": curve.arch, "multipliers": curve.multipliers,
                                           "fractions": curve.fractions}, indent=2) + "\n")
    return 0


def cmd_geometry(a) -> int:
    from .regions import bent_hyperplanes, check_tpic, enumerate_regions
    from .render import render_svg
    net = load(a.net)
    regions = enumerate_regions(net, bbox=a.bbox, seed=a.seed)
    tpic = check_tpic(net, bbox=a.bbox, regions=regions, seed=a.seed)
    print(f"regions: {len(regions)}")
    print(f"tpic: {'pass' if tpic.overall_pass else 'fail'} ({tpic.n_witnessed}/{len(tpic.pairs)} pairs)")
    if a.svg:
        if net.arch.n_in != 2:
            log.error("SVG output needs a 2-D input space")
            return 2
        bent = bent_hyperplanes(net, bbox=a.bbox, regions=regions, seed=a.seed)
        render_svg(bent, regions, a.svg, tpic=tpic)
        print(f"wrote {a.svg}")
    return 0


def cmd_mechanisms(a) -> int:
    from .symmetry import analyze_mechanisms
    rep = analyze_mechanisms(load(a.net), seed=a.seed, margin=a.margin, bbox=a.bbox)
    print(rep.to_text())
    return 0


def cmd_construct(a) -> int:
    from .construct import ConstructionError, WidthConditionError, construct_no_hidden_symmetry, \
        verify_construction
    from .regions import bent_hyperplanes, check_tpic, enumerate_regions
    from .render import render_svg
    try:
        net, state = construct_no_hidden_symmetry(a.arch, seed=a.seed)
    except (ConstructionError, WidthConditionError) as e:
        log.error("construction failed: %s", e)
        return 1
    rep = verify_construction(net, seed=a.seed)
    print(rep.summary())
    if a.out:
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        save(net, out / "network.json")
        (out / "construction.txt").write_text(state.to_text() + "\n", encoding="utf-8")
        (out / "certification.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n",
                                                encoding="utf-8")
        if net.arch.n_in == 2:
            regions = enumerate_regions(net, seed=a.seed)
            tpic = check_tpic(net, regions=regions, seed=a.seed)
            render_svg(bent_hyperplanes(net, regions=regions, seed=a.seed), regions,
                       out / "construction.svg", tpic=tpic)
        print(f"wrote {out}")
    return 0 if rep.certified else 1


def cmd_verify(a) -> int:
    from .construct import verify_construction
    rep = verify_construction(load(a.net), seed=a.seed)
    print(rep.summary())
    return 0 if rep.certified else 1


def build_parser() -> argparse.ArgumentParser:
    from .harness import MODES
    p = argparse.ArgumentParser(prog="relusym", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fdim", help="estimate functional dimension of a saved network")
    s.add_argument("--net", required=True)
    s.add_argument("--m-mult", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_fdim)

    s = sub.add_parser("sweep", help="fdim distribution over random initialisations")
    s.add_argument("--depths", type=_ints, required=True)
    s.add_argument("--widths", type=_ints, required=True)
    s.add_argument("--mode", choices=MODES, default="input-equals-width")
    s.add_argument("--input", type=int, default=5, help="input dimension in fixed-input mode")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--m-mult", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--full-scale", action="store_true", help=f"{FULL_SCALE_TRIALS} trials per architecture")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("msweep", help="fraction at max against the sample multiplier")
    s.add_argument("--arch", type=_arch, required=True)
    s.add_argument("--mults", type=_ints, default=[2, 10, 50, 100, 200])
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_msweep)

    s = sub.add_parser("geometry", help="regions, TPIC and an SVG of the bent hyperplanes")
    s.add_argument("--net", required=True)
    s.add_argument("--svg", default=None)
    s.add_argument("--bbox", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_geometry)

    s = sub.add_parser("mechanisms", help="detect hidden-symmetry mechanisms")
    s.add_argument("--net", required=True)
    s.add_argument("--margin", type=float, default=1e-6)
    s.add_argument("--bbox", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_mechanisms)

    s = sub.add_parser("construct", help="build a network with no hidden symmetries")
    s.add_argument("--arch", type=_arch, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_construct)

    s = sub.add_parser("verify", help="certify a network (TPIC, LRA, fdim at the bound)")
    s.add_argument("--net", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (OSError, NetworkFormatError, ValueError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
