"""SVG drawing of bent hyperplanes in a 2-D input box."""
from __future__ import annotations

from pathlib import Path

from .regions import BentHyperplaneSet

SIZE = 600
_PALETTE = ["#1f4e9c", "#c0392b", "#218c4a", "#8e44ad", "#d35400", "#2c3e50", "#7f8c8d"]


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def svg_text(bent: BentHyperplaneSet, regions=None, size: int = SIZE, tpic=None) -> str:
    lo, hi = bent.bbox
    if len(lo) != 2:
        raise ValueError("rendering needs a 2-D input space")
    span = hi - lo

    def to_px(p):
        x = (p[0] - lo[0]) / span[0] * size
        y = size - (p[1] - lo[1]) / span[1] * size
        return f"{_fmt(x)},{_fmt(y)}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        "<style>",
        "  .frame { fill: white; stroke: black; stroke-width: 1; }",
        "  .neuron polyline { fill: none; stroke-width: 1.6; }",
        "  .layer-1 polyline { stroke-dasharray: none; }",
    ]
    depth = len(bent.arch) - 1
    for ell in range(1, depth + 1):
        col = _PALETTE[(ell - 1) % len(_PALETTE)]
        dash = "" if ell == 1 else f" stroke-dasharray: {2 + 2 * ell} {2 + ell};"
        out.append(f"  .layer-{ell} polyline {{ stroke: {col};{dash} }}")
    out += ["</style>",
            '<defs><clipPath id="bbox"><rect x="0" y="0" '
            f'width="{size}" height="{size}"/></clipPath></defs>',
            f'<rect class="frame" x="0" y="0" width="{size}" height="{size}"/>',
            '<g clip-path="url(#bbox)">']
    for key in sorted(bent.pieces):
        lines = bent.polylines(key)
        if not lines:
            continue
        ell, i = key
        out.append(f'  <g class="neuron layer-{ell}" data-layer="{ell}" data-neuron="{i}">')
        for ln in lines:
            out.append('    <polyline points="' + " ".join(to_px(p) for p in ln) + '"/>')
        out.append("  </g>")
    if tpic is not None:
        # one marker per witnessed pair, at its first witness
        out.append('  <g class="witnesses" fill="black">')
        for p in tpic.pairs:
            if not p.witnesses:
                continue
            x, y = to_px(p.witnesses[0].x).split(",")
            out.append(f'    <circle class="witness" data-pair="{p.layer}:{p.i}:{p.j}" '
                       f'cx="{x}" cy="{y}" r="3"/>')
        out.append("  </g>")
    out += ["</g>", "</svg>", ""]
    return "\n".join(out)


def render_svg(bent: BentHyperplaneSet, regions, path, tpic=None) -> Path:
    """Write the bent-hyperplane picture to ``path``; layer 1 solid, deeper layers dashed.

    With a ``TpicReport`` the witnessed pairwise intersections are marked too."""
    path = Path(path)
    path.write_text(svg_text(bent, regions, tpic=tpic), encoding="utf-8")
    return path


def count_neuron_curves(svg: str) -> int:
    return svg.count('<g class="neuron ')


def count_witness_markers(svg: str) -> int:
    return svg.count('<circle class="witness"')


def count_polylines(svg: str) -> int:
    return svg.count("<polyline ")


__all__ = ["render_svg", "svg_text", "count_neuron_curves", "count_polylines",
           "count_witness_markers"]

