import json

import pytest

from relusym.cli import main
from relusym.network import Network, he_init, save
from relusym.planted import planted_never_coactive


@pytest.fixture
def net_file(tmp_path):
    p = tmp_path / "net.json"
    save(he_init((2, 3, 1), 0), p)
    return p


def test_fdim(net_file, capsys):
    assert main(["fdim", "--net", str(net_file), "--m-mult", "10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["upper_bound"] == 9 and out["m"] == 90


def test_missing_file_fails(tmp_path):
    assert main(["fdim", "--net", str(tmp_path / "nope.json")]) != 0


def test_bad_document_fails(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"arch": [2, 1], "weights": [[["x", 1]]], "biases": []}')
    assert main(["verify", "--net", str(p)]) != 0


def test_sweep_and_msweep(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", "--depths", "3", "--widths", "2", "--trials", "4", "--m-mult", "10",
                 "--out", str(out), "--threads", "1"]) == 0
    assert (out / "trials.csv").exists() and (out / "summary.json").exists()
    assert list(out.glob("hist_*.svg"))
    assert "fraction_at_max" in capsys.readouterr().out
    assert main(["msweep", "--arch", "2,2,1", "--mults", "2,10", "--trials", "3", "--threads", "1"]) == 0


def test_geometry(net_file, tmp_path, capsys):
    svg = tmp_path / "g.svg"
    assert main(["geometry", "--net", str(net_file), "--svg", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")
    assert "regions:" in capsys.readouterr().out


def test_mechanisms(tmp_path, capsys):
    p = tmp_path / "nc.json"
    save(planted_never_coactive(), p)
    assert main(["mechanisms", "--net", str(p)]) == 0
    assert "never-coactive" in capsys.readouterr().out


def test_construct_and_verify(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["construct", "--arch", "2,2,2", "--seed", "0", "--out", str(out)]) == 0
    for name in ("network.json", "construction.txt", "certification.json", "construction.svg"):
        assert (out / name).exists()
    assert main(["verify", "--net", str(out / "network.json")]) == 0
    assert "certified: True" in capsys.readouterr().out


def test_verify_fails_on_uncertified(tmp_path):
    p = tmp_path / "n.json"
    save(Network((2, 2, 2), [[[1, 0], [0, 1]], [[1, 1], [1, 1]]], [[0.0, 0.0]]), p)
    assert main(["verify", "--net", str(p)]) == 1


def test_construct_rejects_bad_arch():
    assert main(["construct", "--arch", "3,2,3"]) == 1
