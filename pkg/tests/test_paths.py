import numpy as np
import pytest

from relusym.jacobian import grad_wrt_params
from relusym.network import Architecture, TernaryLabel, he_init
from relusym.paths import PathExplosionError, open_paths, param_name, path_polynomial


def monomials(arch, label):
    out = set()
    for p in open_paths(arch, label, 0):
        names = [param_name(arch, e) for e in p.edges]
        out.add((p.start[0] if p.start[0] == "b" else f"x{p.start[1] + 1}",) + tuple(names))
    return out


def test_three_open_paths_example():
    arch = Architecture((2, 3, 3, 1), output_bias=True)
    label = TernaryLabel([(-1, 0, 1), (1, 0, 0), (1,)])
    got = monomials(arch, label)
    assert got == {
        ("b", "b^1_3", "W^2_{13}", "W^3_{11}"),
        ("b", "b^2_1", "W^3_{11}"),
        ("b", "b^3_1"),
        ("x1", "W^1_{31}", "W^2_{13}", "W^3_{11}"),
        ("x2", "W^1_{32}", "W^2_{13}", "W^3_{11}"),
    }


def test_all_inactive_gives_zero():
    net = he_init((2, 2, 2, 1), 0)
    label = TernaryLabel([(-1, -1), (-1, -1), (1,)])
    v, g = path_polynomial(net, np.array([0.3, 0.2]), 0, label=label)
    assert v == 0.0 and not np.any(g)


def test_matches_forward_and_backprop():
    rng = np.random.default_rng(0)
    net = he_init((2, 2, 2, 1), 3)
    for _ in range(50):
        x = rng.standard_normal(2)
        v, g = path_polynomial(net, x)
        assert abs(v - net(x[None])[0, 0]) < 1e-10
        assert np.max(np.abs(g - grad_wrt_params(net, x)[0])) < 1e-10


def test_param_names_cover_flat_order():
    arch = Architecture((2, 3, 1))
    names = [param_name(arch, i) for i in range(arch.D)]
    assert names[:3] == ["W^1_{11}", "W^1_{12}", "W^1_{21}"]
    assert names[6:9] == ["b^1_1", "b^1_2", "b^1_3"]
    assert names[-1] == "W^2_{13}"


def test_cap_on_neurons():
    arch = Architecture((2, 10, 10, 1))
    with pytest.raises(PathExplosionError):
        open_paths(arch, TernaryLabel([(1,) * 10, (1,) * 10, (1,)]), 0)
