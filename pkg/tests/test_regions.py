import numpy as np
import pytest

from relusym.network import Architecture, Network, TernaryLabel, he_init
from relusym.planted import planted_collapse, planted_stably_dead
from relusym.regions import (
    EmptyCellError, InputDimensionError, bent_hyperplanes, cell_dim_from_label, check_lra_near_intersections,
    check_tpic, enumerate_regions, genericity_check, region_affine_map,
)
from relusym.render import count_neuron_curves, count_polylines, svg_text


def three_lines():
    # depth one: the three output neurons are the lines
    W = [[1.0, 0.2], [-0.3, 1.0], [0.7, -0.8]]
    return Network(Architecture((2, 3), output_bias=True), [W], [[0.1, -0.4, 0.5]])


def test_generic_line_arrangement_has_seven_regions():
    assert len(enumerate_regions(three_lines(), bbox=10)) == 7


def test_affine_maps_reproduce_forward():
    net = he_init((2, 4, 3, 1), 5)
    for r in enumerate_regions(net, bbox=10):
        A, c = r.affine_map
        assert np.allclose(A @ r.witness + c, net(r.witness[None])[0], atol=1e-10)


def test_all_active_pattern_is_matrix_product():
    net = he_init((2, 3, 2, 1), 1)
    A, c = region_affine_map(net, [1] * 5 + [1])
    W1, W2, W3 = net.weights
    assert np.allclose(A, W3 @ W2 @ W1)
    assert np.allclose(c, W3 @ (W2 @ net.biases[0] + net.biases[1]))


def test_all_inactive_pattern_is_zero():
    net = he_init((2, 3, 2, 1), 1)
    A, c = region_affine_map(net, [-1] * 5 + [1])
    assert not np.any(A) and not np.any(c)


def test_dead_neuron_is_negative_everywhere():
    net = planted_stably_dead(seed=0, width=3)
    # (3,3,3,3,1) is beyond exact enumeration in 3-D? no: n_0 = 3 is allowed
    for r in enumerate_regions(net, bbox=5):
        assert r.pattern.layers[1][2] == -1


def test_enumeration_rejects_high_input_dimension():
    with pytest.raises(InputDimensionError):
        enumerate_regions(he_init((4, 3, 1), 0))


def test_line_pieces_span_the_box():
    bent = bent_hyperplanes(three_lines(), bbox=10)
    for key in [(1, 0), (1, 1), (1, 2)]:
        lines = bent.polylines(key)
        assert len(lines) == 1
        assert np.max(np.abs(lines[0])) == pytest.approx(10.0)


def test_dead_neuron_has_no_pieces():
    net = Network((2, 2, 1, 1), [[[1, 0], [0, 1]], [[-1.0, -1.0]], [[1.0]]], [[0.0, 0.0], [-1.0]])
    bent = bent_hyperplanes(net, bbox=5)
    assert not bent.pieces.get((2, 0))
    rep = check_tpic(net, bbox=5)
    assert all(not p.nonempty for p in rep.pairs if p.j == 0 and p.layer == 1)
    assert not rep.overall_pass


def test_genericity():
    assert all(genericity_check(he_init((2, 4, 3, 1), 0)))
    prop = Network((2, 2, 1), [[[1.0, 2.0], [2.0, 4.0]], [[1.0, 1.0]]], [[1.0, 2.0]])
    assert not genericity_check(prop)[0]
    par = Network((2, 2, 1), [[[1.0, 2.0], [1.0, 2.0]], [[1.0, 1.0]]], [[1.0, -3.0]])
    assert not genericity_check(par)[0]


def test_genericity_over_seeds():
    assert all(all(genericity_check(he_init((2, 3, 3, 1), s))) for s in range(100))


@pytest.mark.parametrize("flat,n0,dim", [((1, -1, 1), 2, 2), ((0, 1, 1), 2, 1), ((0, 0, 0), 2, -1)])
def test_cell_dim(flat, n0, dim):
    lab = TernaryLabel([flat[:2], flat[2:]])
    assert cell_dim_from_label(lab, n0) == dim


def test_lra_vacuous_for_depth_one():
    net = three_lines()
    rep = check_tpic(net, bbox=10)
    assert rep.pairs == [] and rep.overall_pass
    assert check_lra_near_intersections(net, rep).passed


def test_collapse_net_fails_lra():
    net = planted_collapse()
    rep = check_tpic(net, bbox=10)
    lra = check_lra_near_intersections(net, rep)
    assert not lra.passed


def line_scan_pairs(net, box=5.0, n=100_000):
    """Dense oracle: layer-1 zero sets are lines, so walk each one across the
    box and look for a sign change of every layer-2 pre-activation."""
    W, b = net.weights[0], net.bias(1)
    out = {}
    for i in range(len(b)):
        w = W[i]
        p0 = -b[i] * w / (w @ w)
        d = np.array([-w[1], w[0]]) / np.linalg.norm(w)
        t = np.linspace(-4 * box, 4 * box, 8 * n)
        P = p0 + t[:, None] * d
        P = P[np.all(np.abs(P) <= box, axis=1)]
        Z2 = net.preactivations(P)[1] if len(P) else np.zeros((0, net.arch.widths[2]))
        for j in range(net.arch.widths[2]):
            s = np.sign(Z2[:, j])
            out[(i, j)] = bool(len(s) and (np.any(s == 0) or np.any(s[1:] != s[:-1])))
    return out


@pytest.mark.parametrize("output_bias", [False, True])
@pytest.mark.parametrize("seed", range(50))
def test_tpic_against_dense_oracle(seed, output_bias):
    net = he_init(Architecture((2, 3, 2), output_bias=output_bias), seed)
    rep = check_tpic(net, bbox=5)
    oracle = line_scan_pairs(net)
    for p in rep.pairs:
        if p.nonempty:
            assert oracle[(p.i, p.j)], (seed, p.i, p.j)
        else:
            assert not oracle[(p.i, p.j)], (seed, p.i, p.j)


def test_svg_frame_only_for_foldless_net():
    net = Network((2, 1, 1), [[[0.0, 0.0]], [[1.0]]], [[1.0]])
    svg = svg_text(bent_hyperplanes(net, bbox=5))
    assert svg.startswith("<svg") and count_neuron_curves(svg) == 0 and "<rect" in svg


def test_svg_three_lines():
    svg = svg_text(bent_hyperplanes(three_lines(), bbox=10))
    assert count_neuron_curves(svg) == 3 and count_polylines(svg) == 3
