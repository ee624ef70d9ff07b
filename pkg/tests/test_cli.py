import json

import numpy as np
import pytest

from meshdiss.cli import main, parse_variants
from meshdiss.netmodel import ConfigError, Group, NodeParams, SpreadingNetwork, load_network, save_network


@pytest.fixture
def small_file(tmp_path, two_group_net):
    p = tmp_path / "small.json"
    save_network(two_group_net, p)
    return p


def run(argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse exits directly
        code = exc.code
    return code


def test_generate_writes_network_and_summary(tmp_path, capsys):
    assert run(["generate", "--seed", 3, "--out", tmp_path]) == 0
    out = capsys.readouterr().out
    assert "nodes 22" in out
    net = load_network(tmp_path / "network.json")
    assert net.sizes == [5, 6, 7, 4]


def test_generate_custom_groups(tmp_path):
    assert run(["generate", "--seed", 3, "--groups", "2,3", "--out", tmp_path]) == 0
    assert load_network(tmp_path / "network.json").sizes == [2, 3]


def test_generate_without_seed_is_config_error(tmp_path):
    assert run(["generate", "--out", tmp_path]) == 3


def test_unknown_flag_is_config_error(tmp_path):
    assert run(["generate", "--seed", 1, "--bogus", "--out", tmp_path]) == 3


def test_bad_config_file_keys(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seeed": 1}))
    assert run(["generate", "--config", cfg, "--out", tmp_path]) == 3


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "groups": "2,2"}))
    assert run(["generate", "--config", cfg, "--groups", "3,1", "--out", tmp_path]) == 0
    assert load_network(tmp_path / "network.json").sizes == [3, 1]


def test_malformed_network_is_io_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "groups": []}))
    assert run(["analyze", "--network", bad, "--out", tmp_path]) == 4
    assert run(["analyze", "--network", tmp_path / "missing.json", "--out", tmp_path]) == 4


def test_design_outputs(tmp_path, small_file, capsys):
    assert run(["design", "--network", small_file, "--out", tmp_path]) == 0
    assert "J_M" in capsys.readouterr().out
    doc = json.loads((tmp_path / "design.json").read_text())
    assert {"header", "config", "certificates"} <= set(doc)
    designed = load_network(tmp_path / "designed_network.json")
    nominal = load_network(small_file)
    assert np.all(designed.m_inter <= nominal.m_inter * (1 + 1e-7) + 1e-12)


def test_design_bad_delta_is_config_error(tmp_path, small_file):
    assert run(["design", "--network", small_file, "--delta-m", 2.0, "--out", tmp_path]) == 3


def test_infeasible_node_exits_2(tmp_path, capsys):
    hot = Group([NodeParams(0.5, 0.0, 0.5), NodeParams(0.5, 0.0, 0.5)], np.array([[0.9, 0.1], [0.1, 0.0]]))
    p = tmp_path / "hot.json"
    save_network(SpreadingNetwork([hot], np.zeros((2, 2))), p)
    assert run(["design", "--network", p, "--out", tmp_path]) == 2
    err = capsys.readouterr().err
    assert "P_ik" in err and "reduce" in err


def test_analyze_and_simulate(tmp_path, small_file):
    assert run(["analyze", "--network", small_file, "--out", tmp_path]) == 0
    doc = json.loads((tmp_path / "analyze.json").read_text())
    assert "certified" in doc["analysis"]
    assert run(["simulate", "--network", small_file, "--dt", 0.05, "--t-m", 0.2, "--out", tmp_path]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())["metrics"]
    assert 0 <= metrics["j_x"] <= 1
    assert metrics["j_m"] == pytest.approx(0.5)  # 0.3 removed, 0.15 kept
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,group,node,x,u,w,gamma"


def test_simulate_short_horizon_is_config_error(tmp_path, small_file):
    assert run(["simulate", "--network", small_file, "--horizon", 50, "--out", tmp_path]) == 3


def test_compare_deterministic_apart_from_header(tmp_path, small_file, capsys):
    """[DERIVED] fixed seeds and inputs give identical report bodies."""
    docs = []
    out = tmp_path / "cmp"
    for _ in range(2):
        assert run(["compare", "--network", small_file, "--dt", 0.05, "--seed", 2,
                    "--variants", "dissbc:1,0.5", "--out", out]) == 0
        doc = json.loads((out / "report.json").read_text())
        doc.pop("header")
        docs.append(doc)
        assert (out / "series.csv").exists()
        assert json.loads((out / "plots.json").read_text())["data"] == "series.csv"
    assert docs[0] == docs[1]
    labels = [r["label"] for r in docs[0]["comparison"]["rows"]]
    assert "DissBC(1,0.5)" in labels
    assert "Without interconnections" in capsys.readouterr().out


def test_verify_passes_on_small_network(tmp_path, small_file):
    assert run(["verify", "--network", small_file, "--dt", 0.05, "--dist-seeds", 1, "--out", tmp_path]) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["passed"] is True


def test_parse_variants():
    assert parse_variants(["dissbc:1,0.9", "DissBC:2,1"]) == [(1.0, 0.9), (2.0, 1.0)]
    with pytest.raises(ConfigError):
        parse_variants(["tbc:0.2"])
    with pytest.raises(ConfigError):
        parse_variants(["dissbc:1"])
