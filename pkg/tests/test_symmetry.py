import numpy as np
import pytest

from relusym.jacobian import grad_wrt_params
from relusym.network import Network, he_init, label_batch
from relusym.planted import planted_collapse, planted_duplicated, planted_never_coactive, planted_stably_dead
from relusym.rng import keyed_rng
from relusym.symmetry import (
    AffineSubspace, ArchitectureMismatchError, Hyperplane, SymmetryAction, SymmetryError, analyze_mechanisms,
    apply_permutation, apply_scaling, detect_collapse, detect_lowdim_image, detect_never_coactive,
    detect_stably_unactivated, fiber_witness_check, rotate_neuron_family,
)

X = np.random.default_rng(0).standard_normal((1000, 3))


@pytest.fixture
def net():
    return he_init((3, 4, 5, 2), 7)


def test_identity_permutation(net):
    assert apply_permutation(net, 1, [0, 1, 2, 3]) == net


def test_permutation_preserves_function(net):
    other = apply_permutation(net, 2, [4, 2, 0, 1, 3])
    assert np.max(np.abs(other(X) - net(X))) < 1e-12
    assert other != net


def test_swap_twice(net):
    p = [1, 0, 2, 3]
    assert apply_permutation(apply_permutation(net, 1, p), 1, p) == net


@pytest.mark.parametrize("layer,perm", [(0, [0, 1, 2]), (3, [0, 1]), (1, [0, 0, 1, 2]), (1, [0, 1])])
def test_bad_permutations(net, layer, perm):
    with pytest.raises(SymmetryError):
        apply_permutation(net, layer, perm)


def test_scaling(net):
    assert apply_scaling(net, 1, 2, 1.0) == net
    two = apply_scaling(net, 1, 2, 2.0)
    assert np.max(np.abs(two(X) - net(X))) < 1e-12
    assert np.array_equal(apply_scaling(two, 1, 2, 0.5).flat, net.flat)


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_nonpositive_scaling_rejected(net, c):
    with pytest.raises(SymmetryError):
        apply_scaling(net, 1, 0, c)


def test_scaling_keeps_labels(net):
    assert np.array_equal(label_batch(apply_scaling(net, 2, 1, 3.5), X), label_batch(net, X))


def test_permutation_permutes_labels(net):
    perm = [3, 1, 0, 2]
    a, b = label_batch(net, X), label_batch(apply_permutation(net, 1, perm), X)
    assert np.array_equal(b[:, :4], a[:, perm])
    assert np.array_equal(b[:, 4:], a[:, 4:])


def test_scaling_and_permutation_commute(net):
    perm = [2, 0, 3, 1]
    inv = np.argsort(perm)
    a = apply_scaling(apply_permutation(net, 1, perm), 1, 0, 2.5)
    b = apply_permutation(apply_scaling(net, 1, perm[0], 2.5), 1, perm)
    assert np.allclose(a.flat, b.flat, rtol=0, atol=1e-15)
    assert inv[perm[0]] == 0


def test_random_actions_preserve_function():
    rng = keyed_rng(0, "actions")
    for s in range(20):
        n = he_init((3, 4, 4, 1), s)
        act = SymmetryAction.random(n.arch, rng)
        assert np.max(np.abs(act.apply(n)(X) - n(X))) < 1e-12


def test_orthant_criterion():
    W2 = [[-1.0, -1.0], [1.0, 1.0]]
    n = Network((2, 2, 2, 1), [np.eye(2), W2, [[1.0, 1.0]]], [[0.0, 0.0], [-1.0, 0.0]])
    found = detect_stably_unactivated(n)
    assert [(f.layer, f.neuron, f.criterion) for f in found] == [(2, 0, "orthant-separation")]


def test_mixed_sign_row_is_left_to_sampling():
    n = Network((2, 2, 2, 1), [np.eye(2), [[-1.0, 0.5], [1.0, 1.0]], [[1.0, 1.0]]], [[0.0, 0.0], [-1.0, 0.0]])
    found = detect_stably_unactivated(n)
    # x2 > 2 + 2 x1 with x1 <= 0 is reachable, so neither criterion fires
    assert not any(f.criterion == "orthant-separation" for f in found)
    assert found == []


def test_sampled_criterion_fires_when_image_misses_halfspace():
    # layer-1 image is {(r, r)}: -y1 + 0.5 y2 - 1 < 0 there
    n = Network((1, 2, 1, 1), [[[1.0], [1.0]], [[-1.0, 0.5]], [[1.0]]], [[0.0, 0.0], [-1.0]])
    found = detect_stably_unactivated(n)
    assert [(f.layer, f.neuron, f.criterion) for f in found] == [(2, 0, "sampled")]


def test_planted_dead_neuron_found():
    found = detect_stably_unactivated(planted_stably_dead())
    assert (2, 2, "orthant-separation") in [(f.layer, f.neuron, f.criterion) for f in found]


def test_few_orthant_findings_at_init():
    hits = sum(f.criterion == "orthant-separation"
               for s in range(20) for f in detect_stably_unactivated(he_init((10, 10, 10, 1), s), n_samples=0))
    assert hits <= 1


def test_never_coactive_planted():
    n = planted_never_coactive()
    found = detect_never_coactive(n)
    assert [(f.layer, f.i, f.j, f.evidence) for f in found] == [(1, 0, 0, "region-enumeration")]
    # the connecting weight W^2_{11} (flat index 4) never receives gradient
    xs = keyed_rng(0, "cw").standard_normal(10_000) * 3
    col = [grad_wrt_params(n, np.array([x]))[0, 4] for x in xs]
    assert not np.any(col)


def test_never_coactive_absent_when_all_active():
    n = Network((2, 2, 2, 1), [np.eye(2), np.ones((2, 2)), [[1.0, 1.0]]], [[100.0, 100.0], [100.0, 100.0]])
    assert detect_never_coactive(n) == []


def test_never_coactive_sampled_label_in_high_dimension():
    found = detect_never_coactive(planted_stably_dead(), n_samples=2000)
    assert found and all(f.evidence == "sampled" for f in found)


def test_collapse_planted():
    found = detect_collapse(planted_collapse())
    assert len(found) == 1 and (found[0].layer, found[0].neuron) == (1, 0)


def test_collapse_absent_for_depth_one():
    n = Network((2, 3, 1), [np.random.default_rng(1).standard_normal((3, 2)), [[1.0, -2.0, 0.5]]],
                [[0.1, 0.2, -0.3]])
    assert detect_collapse(n) == []


def test_lowdim_image():
    d = planted_duplicated()
    assert detect_lowdim_image(d.net, 1, 100) == (1, 1)
    zero = Network((2, 3, 1), [np.zeros((3, 2)), np.zeros((1, 3))], [[0.5, -1.0, 2.0]])
    assert detect_lowdim_image(zero, 1, 100) == (0, 3)
    with pytest.raises(ValueError):
        detect_lowdim_image(d.net, 1, 5)


def test_lowdim_image_full_at_init():
    assert all(detect_lowdim_image(he_init((5, 5, 5, 5, 1), s), 1, 500)[1] == 0 for s in range(100))


def test_rotation_on_a_line():
    n = Network((2, 1, 1), [[[1.0, 1.0]], [[1.0]]], [[-1.0]])
    S = Hyperplane(normal=np.array([0.0, 1.0]), point=np.zeros(2))
    r = rotate_neuron_family(n, 1, 0, S, 0.7, anchor=np.array([1.0, 0.0]))
    for a in np.linspace(-3, 3, 13):
        x = np.array([a, 0.0])
        assert r.preactivations(x[None])[0][0, 0] == pytest.approx(a - 1.0)
    assert rotate_neuron_family(n, 1, 0, S, 0.0, anchor=np.array([1.0, 0.0])) is n


def test_rotation_preconditions():
    n = Network((2, 1, 1), [[[1.0, 1.0]], [[1.0]]], [[-1.0]])
    S = AffineSubspace(point=np.zeros(2), basis=np.array([[1.0], [0.0]]))
    with pytest.raises(SymmetryError):
        rotate_neuron_family(n, 1, 0, S, 0.5, o=np.array([1.0, 1.0]), anchor=np.array([1.0, 0.0]))
    with pytest.raises(SymmetryError):
        rotate_neuron_family(n, 1, 0, S, 0.5, o=np.array([0.0, 1.0]), anchor=np.array([2.0, 0.0]))
    with pytest.raises(SymmetryError):
        rotate_neuron_family(n, 1, 0, S, 0.5, o=np.zeros(2), anchor=np.array([1.0, 0.0]))


@pytest.mark.parametrize("t", [-0.5, -0.1, 0.1, 0.5])
def test_rotation_family_stays_in_fiber(t):
    d = planted_duplicated()
    r = rotate_neuron_family(d.net, d.layer, d.neuron, d.S, t, anchor=d.anchor)
    assert not np.allclose(r.flat, d.net.flat)
    assert fiber_witness_check(d.net, r, 10_000)


def test_fiber_check():
    n = he_init((3, 4, 1), 0)
    assert fiber_witness_check(n, apply_scaling(n, 1, 0, 3.0))
    W = np.array(n.weights[1])
    W[0, 0] += 0.1
    assert not fiber_witness_check(n, n.replace(2, W=W))
    with pytest.raises(ArchitectureMismatchError):
        fiber_witness_check(n, he_init((3, 5, 1), 0))


def test_report_text_has_witnesses():
    rep = analyze_mechanisms(planted_never_coactive())
    text = rep.to_text()
    assert "never-coactive" in text and rep.never_coactive[0].witness["digest"] in text
    assert rep.any_found
