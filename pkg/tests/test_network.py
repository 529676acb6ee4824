import json

import numpy as np
import pytest

from relusym.network import (
    Architecture, Network, NetworkFormatError, ShapeMismatchError, TernaryLabel, deserialize,
    forward, he_init, label_batch, load, param_count, save, serialize, ternary_label,
)


def tiny(w1, b1, w2):
    return Network((1, 1, 1), [[[w1]], [[w2]]], [[b1]])


@pytest.mark.parametrize("widths,D", [((1, 1, 1), 3), ((2, 5, 3, 3), 42), ((5, 5, 5, 5, 1), 95)])
def test_param_count(widths, D):
    assert param_count(widths) == D
    assert he_init(widths, 0).flat.size == D


def test_param_count_with_output_bias():
    assert param_count(Architecture((2, 5, 3, 3), output_bias=True)) == 45


@pytest.mark.parametrize("x,y", [(-2.0, 0.0), (3.0, 3.0)])
def test_forward_identity_net(x, y):
    assert forward(tiny(1, 0, 1), [x]).output[0] == y


def test_forward_negative_output_weight():
    assert forward(tiny(2, -1, -1), [2.0]).output[0] == -3.0


@pytest.mark.parametrize("x,s", [(0.5, 0), (1.0, 1), (0.0, -1)])
def test_ternary_label_first_layer(x, s):
    lab = ternary_label(tiny(2, -1, -1), np.array([x]))
    assert lab.layers[0] == (s,)


def test_ternary_label_rejects_negative_tolerance():
    with pytest.raises(ValueError):
        ternary_label(tiny(1, 0, 1), np.array([1.0]), zero_atol=-1.0)


def test_label_string_round_trip():
    net = he_init((2, 3, 2, 1), 4)
    lab = ternary_label(net, np.array([0.3, -0.7]))
    assert TernaryLabel.parse(str(lab)) == lab
    assert "|" in str(lab)


def test_label_batch_matches_single_labels():
    net = he_init((3, 4, 4, 2), 1)
    X = np.random.default_rng(0).standard_normal((20, 3))
    L = label_batch(net, X)
    for x, row in zip(X, L):
        assert tuple(row) == ternary_label(net, x).flat


def test_he_init_is_deterministic():
    a, b = he_init((4, 6, 6, 1), 11), he_init((4, 6, 6, 1), 11)
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, he_init((4, 6, 6, 1), 12).flat)


def test_he_init_variances():
    Ws, bs = [], []
    for s in range(1000):
        net = he_init((10, 10, 1), s)
        Ws.append(net.weights[0].ravel())
        bs.append(net.biases[0])
    W, b = np.concatenate(Ws), np.concatenate(bs)
    assert W.size == 100_000
    assert abs(W.var() / 0.2 - 1) < 0.02
    assert abs(b.var() / 0.01 - 1) < 0.05


def test_serialize_round_trip(tmp_path):
    net = he_init((3, 5, 2), 2)
    back = deserialize(serialize(net))
    assert back == net
    assert np.array_equal(back.flat, net.flat)
    save(net, tmp_path / "n.json")
    assert load(tmp_path / "n.json") == net


def test_serialize_round_trip_output_bias():
    net = he_init(Architecture((2, 3, 2), output_bias=True), 0)
    back = deserialize(serialize(net))
    assert back.arch.output_bias and back == net


def test_wrong_row_length_is_a_shape_error():
    doc = json.loads(serialize(he_init((2, 3, 1), 0)))
    doc["weights"][0][1] = [1.0]
    with pytest.raises(ShapeMismatchError):
        deserialize(json.dumps(doc))


@pytest.mark.parametrize("bad", ['"abc"', "NaN", "true"])
def test_non_numeric_token_is_a_parse_error(bad):
    text = serialize(he_init((1, 1, 1), 0)).replace("[[", f"[[{bad}, ", 1)
    with pytest.raises((NetworkFormatError, ShapeMismatchError)):
        deserialize(text)


def test_garbage_document():
    with pytest.raises(NetworkFormatError):
        deserialize("{not json")


def test_network_is_immutable():
    net = he_init((2, 2, 1), 0)
    with pytest.raises(AttributeError):
        net.arch = None
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0


def test_call_matches_forward():
    net = he_init((3, 4, 2), 5)
    X = np.random.default_rng(1).standard_normal((7, 3))
    Y = net(X)
    for x, y in zip(X, Y):
        assert np.allclose(forward(net, x).output, y, rtol=0, atol=1e-14)


def test_architecture_parse():
    assert Architecture.parse("2,5,3,3").widths == (2, 5, 3, 3)
    a = Architecture.parse("(2,2,2)+b")
    assert a.output_bias and str(a) == "(2,2,2)+b"
