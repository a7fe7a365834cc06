# -*- coding: utf-8 -*-
"""
命令行入口：退出码、配置文件与参数优先级、输出文件
"""
import json

import pytest

import ann_closure
from ann_closure import Config, build_parser, main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_close_ann_converges(capsys):
    code, out, _ = _run(capsys, "close", "--dut", "comparator", "--width", "2", "--method", "ann", "--seed", "7")
    assert code == 0
    assert "测试迭代" in out
    assert "总迭代" in out


def test_close_random_hits_cap(capsys):
    code, out, _ = _run(
        capsys, "close", "--dut", "comparator", "--width", "5", "--method", "random", "--seed", "7", "--cap", "100"
    )
    assert code == 2
    assert "测试迭代: 100" in out


def test_close_invalid_width(capsys):
    code, _, err = _run(capsys, "close", "--dut", "comparator", "--width", "0", "--method", "random", "--seed", "0")
    assert code == 3
    assert err


def test_close_writes_log_and_holes(capsys, tmp_path):
    log = tmp_path / "run.csv"
    code, out, _ = _run(
        capsys,
        "close", "--dut", "comparator", "--width", "2", "--method", "random", "--goal", "0.5", "--seed", "1",
        "--log", str(log), "--show-holes",
    )
    assert code == 0
    assert log.read_text().startswith("iteration,phase,source")
    assert "a×b" in out


def test_close_save_and_load_model(capsys, tmp_path):
    model = tmp_path / "net.json"
    code, _, _ = _run(
        capsys, "close", "--dut", "comparator", "--width", "1", "--method", "ann", "--seed", "0",
        "--epochs", "50", "--save-model", str(model),
    )
    assert code == 0
    assert json.loads(model.read_text())["layer_sizes"][0] == 8
    code, _, _ = _run(
        capsys, "close", "--dut", "comparator", "--width", "1", "--method", "ann", "--seed", "3",
        "--load-model", str(model),
    )
    assert code == 0
    code, _, _ = _run(
        capsys, "close", "--dut", "comparator", "--width", "2", "--method", "ann", "--seed", "0",
        "--load-model", str(model),
    )
    assert code == 3


def test_compare_writes_report_and_table(capsys, tmp_path):
    out_path = tmp_path / "r.json"
    svg_path = tmp_path / "c.svg"
    argv = [
        "compare", "--dut", "comparator", "--widths", "1,2", "--seeds", "2",
        "--epochs", "100", "--out", str(out_path), "--svg", str(svg_path), "--workers", "2",
    ]
    code, out, _ = _run(capsys, *argv)
    assert code == 0
    rows = [line for line in out.splitlines() if line.split("|")[0].strip() in ("1", "2")]
    assert len(rows) == 2
    assert svg_path.read_text().count("<polyline") == 4

    first = json.loads(out_path.read_text())
    code, _, _ = _run(capsys, *argv)
    second = json.loads(out_path.read_text())
    first.pop("timestamp")
    second.pop("timestamp")
    assert first == second


@pytest.mark.slow
def test_compare_three_widths(capsys, tmp_path):
    out_path = tmp_path / "r.json"
    code, out, _ = _run(
        capsys, "compare", "--dut", "comparator", "--widths", "1,2,3", "--seeds", "10", "--out", str(out_path)
    )
    assert code == 0
    rows = [line for line in out.splitlines() if line.split("|")[0].strip() in ("1", "2", "3")]
    assert len(rows) == 3


def test_compare_requires_out(capsys):
    code, _, _ = _run(capsys, "compare", "--widths", "1", "--seeds", "1")
    assert code == 3


def test_bughunt_small(capsys, tmp_path):
    log = tmp_path / "fail.csv"
    code, out, _ = _run(
        capsys,
        "bughunt", "--width", "3", "--iterations", "60", "--seed", "3", "--pool", "32",
        "--train-transactions", "100", "--epochs", "30", "--log", str(log),
    )
    assert code == 0
    assert "失败导向" in out and "随机基线" in out and "倍数" in out
    for line in log.read_text().splitlines()[1:]:
        op, a, b = line.split(",")[3].split("|")
        assert op == "1" and a == b


@pytest.mark.slow
def test_bughunt_reference_run(capsys):
    code, out, _ = _run(capsys, "bughunt", "--dut", "alu", "--width", "4", "--iterations", "500", "--seed", "3")
    assert code == 0
    for line in out.splitlines():
        if line.startswith("🐞"):
            fields = dict(item.split("=") for item in line.split()[1:4])
            assert fields["op"] == "1"
            assert fields["a"] == fields["b"]


def test_bughunt_zero_iterations(capsys):
    code, _, err = _run(capsys, "bughunt", "--dut", "alu", "--width", "4", "--iterations", "0", "--seed", "3")
    assert code == 3
    assert err


def test_report_table_and_svg(capsys, tmp_path):
    out_path = tmp_path / "r.json"
    svg_path = tmp_path / "c.svg"
    code, _, _ = _run(capsys, "compare", "--widths", "1", "--seeds", "1", "--epochs", "50", "--out", str(out_path))
    assert code == 0
    code, out, _ = _run(capsys, "report", "--in", str(out_path), "--table")
    assert code == 0
    assert out.startswith("Width")
    code, _, _ = _run(capsys, "report", "--in", str(out_path), "--svg", str(svg_path))
    assert code == 0
    assert svg_path.read_text().startswith("<svg")


def test_report_missing_file(capsys, tmp_path):
    code, _, err = _run(capsys, "report", "--in", str(tmp_path / "missing.json"))
    assert code == 3
    assert err


def test_flags_override_config_file(tmp_path):
    config_path = tmp_path / "cfg.json"
    Config.write_json(
        str(config_path),
        {"width": 3, "method": "random", "engine": {"iteration_cap": 100, "base_seed": 4}, "network": {"epochs": 10}},
    )
    args = build_parser().parse_args(["close", "--config", str(config_path), "--cap", "200", "--lr", "0.1"])
    config = Config.load(args)
    assert config.width == 3
    assert config.method == "random"
    assert config.engine.iteration_cap == 200
    assert config.engine.base_seed == 4
    assert config.network.epochs == 10
    assert config.network.learning_rate == 0.1
    assert config.engine.retrain_interval == 64


@pytest.mark.parametrize(
    "content",
    [{"colour": "blue"}, {"engine": {"speed": 1}}, {"engine": 5}, {"engine": {"iteration_cap": "many"}}, [1, 2]],
)
def test_bad_config_file(capsys, tmp_path, content):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(content))
    code, _, err = _run(capsys, "close", "--method", "random", "--config", str(config_path))
    assert code == 3
    assert err


def test_template_config_is_valid():
    data = Config.read_json(ann_closure.__file__.replace("ann_closure.py", "closure_config.json"))
    Config.validate(data)


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["launch"],
        ["close", "--width", "abc"],
        ["close", "--dut", "comparator", "--seed", "0", "--width", "9", "--method", "random"],
        ["close", "--method", "genetic"],
        ["close", "--dut", "comparator", "--seed", "0", "--width", "2", "--goal", "2", "--method", "random"],
        ["close", "--dut", "comparator", "--seed", "0", "--lr", "-1", "--method", "ann", "--width", "1"],
        ["close", "--dut", "comparator", "--width", "2", "--seed", "-5", "--method", "random"],
        ["close", "--dut", "comparator", "--seed", "0", "--width", "2", "--cap", "0", "--method", "random"],
        ["close", "--config", "/nonexistent/cfg.json"],
        ["compare", "--widths", "1,x", "--out", "r.json"],
        ["compare", "--widths", "", "--out", "r.json"],
        ["bughunt", "--dut", "comparator"],
        ["bughunt", "--pool", "0", "--iterations", "5"],
        ["report"],
        ["report", "--in"],
        ["--debug"],
        ["close", "--unknown-flag"],
    ],
)
def test_invalid_flags_exit_3(capsys, argv):
    code, _, _ = _run(capsys, *argv)
    assert code == 3


def test_help_exits_0(capsys):
    code, out, _ = _run(capsys, "--help")
    assert code == 0
    assert "close" in out


@pytest.mark.parametrize("missing", ["--dut", "--width", "--method", "--seed"])
def test_close_requires_core_flags(capsys, missing):
    flags = {"--dut": "comparator", "--width": "1", "--method": "random", "--seed": "0"}
    del flags[missing]
    argv = ["close"] + [item for pair in flags.items() for item in pair]
    code, _, err = _run(capsys, *argv)
    assert code == 3
    assert missing in err


def test_close_core_flags_from_config_file(capsys, tmp_path):
    config_path = tmp_path / "cfg.json"
    Config.write_json(
        str(config_path), {"dut": "comparator", "width": 1, "method": "random", "engine": {"base_seed": 2}}
    )
    code, out, _ = _run(capsys, "close", "--config", str(config_path))
    assert code == 0
    assert "种子: 2" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["close", "--dut", "comparator", "--width", "7", "--method", "ann", "--seed", "0"],
        ["close", "--dut", "comparator", "--width", "8", "--method", "ann", "--seed", "0"],
        ["compare", "--widths", "2,7", "--seeds", "1", "--out", "r.json"],
    ],
)
def test_ann_width_limit(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 3
    assert str(ann_closure.MAX_ANN_WIDTH) in err


def test_random_method_keeps_wide_limit(capsys):
    code, out, _ = _run(
        capsys, "close", "--dut", "comparator", "--width", "8", "--method", "random", "--seed", "0", "--cap", "10"
    )
    assert code == 2
    assert "测试迭代: 10" in out
