# !/usr/bin/env python3
# -*- coding: utf-8 -*-
# ConfigFile: closure_config.json
"""
覆盖率闭环回归入口
  close    单次覆盖率闭环（random 或 ann）
  compare  随机与网络方法的对比实验
  bughunt  失败导向找 bug
  report   从已保存的报告重新生成表格或曲线
"""
import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

from closure import LOG_DATEFMT, LOG_FORMAT, __version__, ann
from closure.coverage import default_model, hole_tree, model_from_description
from closure.engine import (
    BIN_ORDERS,
    METHODS,
    TARGET_STRATEGIES,
    EngineConfig,
    ModelSettings,
    compare_experiment,
    random_baseline_failures,
    run_failure_directed,
    run_ml_to_closure,
    run_random_to_closure,
)
from closure.errors import ClosureError, ConfigError
from closure.reporting import (
    format_table,
    ratio,
    read_report_json,
    render_convergence_svg,
    report_curves,
    write_report_json,
    write_run_log,
)
from closure.stimulus import constraints_from_description
from duts import DutFactory

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 3

MAX_WIDTH = 8
# 网络第一层为 B × H，W=7 时已超过 1 GB
MAX_ANN_WIDTH = 6
DEBUG = os.environ.get("DEBUG", "false").lower() == "true"


class UsageError(ConfigError):
    """命令行参数错误"""


class ClosureArgumentParser(argparse.ArgumentParser):
    """参数错误时抛异常而不是直接以 2 退出，退出码 2 留给未收敛"""

    def error(self, message):
        raise UsageError(message)


# 顶层键 -> 允许的子键；None 表示标量
CONFIG_SCHEMA = {
    "dut": None,
    "width": None,
    "widths": None,
    "seeds": None,
    "method": None,
    "iterations": None,
    "workers": None,
    "cross_only": None,
    "coverage": None,
    "constraints": None,
    "engine": {
        "train_transactions",
        "iteration_cap",
        "retrain_interval",
        "per_bin_model_attempts",
        "goal",
        "base_seed",
        "target_strategy",
        "bin_order",
        "candidate_pool",
    },
    "network": {"hidden", "learning_rate", "epochs", "retrain_epochs", "init_seed"},
    "output": {"log", "save_model", "load_model", "report", "svg"},
}

# 命令行参数 -> (配置分组, 键)
FLAG_MAP = {
    "dut": (None, "dut"),
    "width": (None, "width"),
    "widths": (None, "widths"),
    "seeds": (None, "seeds"),
    "method": (None, "method"),
    "iterations": (None, "iterations"),
    "workers": (None, "workers"),
    "cross_only": (None, "cross_only"),
    "seed": ("engine", "base_seed"),
    "cap": ("engine", "iteration_cap"),
    "goal": ("engine", "goal"),
    "train_transactions": ("engine", "train_transactions"),
    "retrain_interval": ("engine", "retrain_interval"),
    "attempts": ("engine", "per_bin_model_attempts"),
    "target_strategy": ("engine", "target_strategy"),
    "bin_order": ("engine", "bin_order"),
    "pool": ("engine", "candidate_pool"),
    "hidden": ("network", "hidden"),
    "lr": ("network", "learning_rate"),
    "epochs": ("network", "epochs"),
    "retrain_epochs": ("network", "retrain_epochs"),
    "init_seed": ("network", "init_seed"),
    "log": ("output", "log"),
    "save_model": ("output", "save_model"),
    "load_model": ("output", "load_model"),
    "out": ("output", "report"),
    "svg": ("output", "svg"),
}

# close 必须给出的参数，命令行或配置文件任一处提供即可
CLOSE_REQUIRED = ("dut", "width", "method", "seed")


@dataclass
class ExperimentConfig:
    dut: str = "comparator"
    width: int = 2
    widths: List[int] = field(default_factory=lambda: [1, 2, 3])
    seeds: int = 10
    method: str = "ann"
    iterations: int = 500
    workers: Optional[int] = None
    cross_only: bool = False
    coverage: object = "default"
    constraints: Dict = field(default_factory=dict)
    engine: EngineConfig = field(default_factory=EngineConfig)
    network: ModelSettings = field(default_factory=ModelSettings)
    output: Dict = field(default_factory=dict)


class Config:
    # 读取 JSON 文件内容
    def read_json(config_path):
        with open(config_path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return data

    # 将数据写入 JSON 文件
    def write_json(config_path, data):
        with open(config_path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, sort_keys=False, indent=2)

    def validate(config_data):
        """拒绝未知字段"""
        if not isinstance(config_data, dict):
            raise ConfigError("配置文件顶层必须是 JSON 对象")
        for key, value in config_data.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"配置文件存在未知字段: {key}")
            allowed = CONFIG_SCHEMA[key]
            if allowed is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"配置字段 {key} 必须是对象")
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"配置字段 {key} 存在未知子字段: {', '.join(sorted(unknown))}")

    def merge(config_data, args):
        """优先级：默认值 < 配置文件 < 命令行参数"""
        merged = {key: (dict(value) if isinstance(value, dict) and CONFIG_SCHEMA.get(key) else value)
                  for key, value in config_data.items()}
        for dest, (group, key) in FLAG_MAP.items():
            value = getattr(args, dest, None)
            if value is None:
                continue
            if group is None:
                merged[key] = value
            else:
                merged.setdefault(group, {})[key] = value
        return merged

    def build(merged):
        defaults = ExperimentConfig()
        try:
            config = ExperimentConfig(
                dut=merged.get("dut", defaults.dut),
                width=merged.get("width", defaults.width),
                widths=merged.get("widths", defaults.widths),
                seeds=merged.get("seeds", defaults.seeds),
                method=merged.get("method", defaults.method),
                iterations=merged.get("iterations", defaults.iterations),
                workers=merged.get("workers", defaults.workers),
                cross_only=bool(merged.get("cross_only", defaults.cross_only)),
                coverage=merged.get("coverage", defaults.coverage),
                constraints=merged.get("constraints", defaults.constraints),
                engine=EngineConfig(**merged.get("engine", {})),
                network=ModelSettings(**merged.get("network", {})),
                output=merged.get("output", {}),
            )
        except TypeError as e:
            raise ConfigError(f"配置类型错误: {e}") from e
        Config.check(config)
        return config

    def check(config):
        if config.dut not in DutFactory.get_supported_types():
            raise ConfigError(f"未知的 DUT: {config.dut}")
        for width in [config.width] + list(config.widths):
            if not isinstance(width, int) or not 1 <= width <= MAX_WIDTH:
                raise ConfigError(f"位宽必须为 1..{MAX_WIDTH} 的整数: {width}")
        if not config.widths:
            raise ConfigError("widths 不能为空")
        if not isinstance(config.seeds, int) or config.seeds < 1:
            raise ConfigError(f"seeds 必须为正整数: {config.seeds}")
        if not isinstance(config.iterations, int) or config.iterations < 1:
            raise ConfigError(f"iterations 必须为正整数: {config.iterations}")
        if config.workers is not None and config.workers < 1:
            raise ConfigError(f"workers 必须为正整数: {config.workers}")
        if config.method not in METHODS:
            raise ConfigError(f"未知的方法: {config.method}")
        net = config.network
        if net.hidden is not None and net.hidden < 1:
            raise ConfigError(f"hidden 必须为正整数: {net.hidden}")
        if not net.learning_rate >= 0 or net.epochs < 1 or net.retrain_epochs < 1:
            raise ConfigError("learning_rate 不能为负，epochs 必须为正整数")

    def check_ann_widths(widths):
        for width in widths:
            if width > MAX_ANN_WIDTH:
                raise ConfigError(f"网络方法的位宽上限为 {MAX_ANN_WIDTH}: {width}")

    def load(args, required=()):
        """
        Args:
            required: 必须出现的命令行参数名（FLAG_MAP 的键）
        """
        config_data = {}
        if getattr(args, "config", None):
            config_data = Config.read_json(args.config)
            Config.validate(config_data)
        merged = Config.merge(config_data, args)
        missing = []
        for dest in required:
            group, key = FLAG_MAP[dest]
            if key not in (merged if group is None else merged.get(group, {})):
                missing.append("--" + dest.replace("_", "-"))
        if missing:
            raise UsageError(f"缺少参数: {' '.join(missing)}")
        return Config.build(merged)


def parse_widths(text):
    try:
        return [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"非法的位宽列表: {text}")


def build_parser():
    parser = ClosureArgumentParser(
        prog="ann_closure.py",
        description="神经网络驱动的覆盖率闭环回归",
        epilog="默认值: cap=5000 goal=1.0 retrain-interval=64 attempts=3 "
        "train-transactions=min(4*B,2000) lr=0.5 epochs=300 retrain-epochs=30 pool=256",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="输出调试日志")
    sub = parser.add_subparsers(dest="command", parser_class=ClosureArgumentParser)

    def common(p, dut_choices=None, dut_default=None):
        p.add_argument("--config", help="JSON 实验配置文件")
        p.add_argument("--dut", choices=dut_choices or DutFactory.get_supported_types(), default=dut_default)
        p.add_argument("--seed", type=int, help="基础种子 (默认 0)")
        p.add_argument("--cap", type=int, help="测试阶段迭代上限 (默认 5000)")
        p.add_argument("--goal", type=float, help="覆盖率目标 (默认 1.0)")
        p.add_argument("--train-transactions", type=int, help="训练阶段事务数")
        p.add_argument("--retrain-interval", type=int, help="重训练间隔 (默认 64)")
        p.add_argument("--hidden", type=int, help="隐藏层宽度 (默认 max(8, ceil((B+D)/2)))")
        p.add_argument("--lr", type=float, help="学习率 (默认 0.5)")
        p.add_argument("--epochs", type=int, help="训练轮数 (默认 300)")
        p.add_argument("--retrain-epochs", type=int, help="增量重训练轮数 (默认 30)")
        p.add_argument("--init-seed", type=int, help="网络初始化种子 (默认等于运行种子)")

    def closure_options(p):
        p.add_argument("--attempts", type=int, help="每个 bin 的模型尝试次数 (默认 3)")
        p.add_argument("--target-strategy", choices=TARGET_STRATEGIES, help="空洞编码方式 (默认 compose)")
        p.add_argument("--bin-order", choices=BIN_ORDERS, help="空洞选择顺序 (默认 lowest)")
        p.add_argument("--cross-only", action="store_true", default=None, help="默认覆盖率模型只统计 cross")

    p = sub.add_parser("close", help="单次覆盖率闭环", description="--dut --width --method --seed 必填，也可以写在 --config 中")
    common(p)
    closure_options(p)
    p.add_argument("--width", type=int, help=f"数据位宽，必填 (网络方法 1..{MAX_ANN_WIDTH}，随机方法 1..{MAX_WIDTH})")
    p.add_argument("--method", choices=METHODS, help="必填")
    p.add_argument("--log", help="运行记录 CSV 路径")
    p.add_argument("--save-model", help="保存训练后的网络")
    p.add_argument("--load-model", help="载入网络并跳过初始训练")
    p.add_argument("--show-holes", action="store_true", help="结束后打印覆盖空洞树")

    p = sub.add_parser("compare", help="随机与网络方法对比实验")
    common(p)
    closure_options(p)
    p.add_argument("--widths", type=parse_widths, help="逗号分隔的位宽列表")
    p.add_argument("--seeds", type=int, help="每个位宽的种子数")
    p.add_argument("--workers", type=int, help="并发运行数 (默认 CLOSURE_WORKERS 或 4)")
    p.add_argument("--out", help="JSON 报告路径")
    p.add_argument("--svg", help="收敛曲线 SVG 路径")

    p = sub.add_parser("bughunt", help="失败导向找 bug")
    common(p, dut_choices=["alu"], dut_default="alu")
    p.add_argument("--width", type=int)
    p.add_argument("--iterations", type=int, help="测试阶段迭代次数")
    p.add_argument("--pool", type=int, help="每次迭代的候选激励数 (默认 256)")
    p.add_argument("--log", help="失败激励 CSV 路径")

    p = sub.add_parser("report", help="从报告重新生成表格或曲线")
    p.add_argument("--in", dest="input", required=True, help="JSON 报告路径")
    p.add_argument("--table", action="store_true", help="打印对比表")
    p.add_argument("--svg", help="收敛曲线 SVG 路径")
    return parser


def build_coverage(config, dut):
    if config.coverage in ("default", None):
        return default_model(dut, cross_only=config.cross_only)
    if not isinstance(config.coverage, dict):
        raise ConfigError("coverage 必须为 \"default\" 或模型描述对象")
    return model_from_description(dut.spec, config.coverage)


def cmd_close(args):
    config = Config.load(args, CLOSE_REQUIRED)
    if config.method == "ann":
        Config.check_ann_widths([config.width])
    dut = DutFactory.create_dut(config.dut, config.width)
    model = build_coverage(config, dut)
    constraints = constraints_from_description(dut.spec, config.constraints)
    output = config.output

    print(f"===============覆盖率闭环===============")
    print(f"🔧 DUT: {dut.DUT_TYPE} W={dut.width}, {model.total_bins} bins, 方法: {config.method}, 种子: {config.engine.base_seed}")
    if config.method == "random":
        result = run_random_to_closure(dut, model, config.engine, constraints)
    else:
        network = None
        if output.get("load_model"):
            network = ann.load_network(
                output["load_model"],
                config.network.network_config(model.total_bins, dut.spec.input_bits, config.engine.base_seed),
            )
        result = run_ml_to_closure(dut, model, config.engine, config.network, constraints, network)
        if output.get("save_model"):
            ann.save_network(result.network, output["save_model"])
            print(f"💾 网络已保存: {output['save_model']}")

    print(f"测试迭代: {result.test_iterations}")
    print(f"总迭代: {result.total_iterations}")
    print(f"最终覆盖率: {result.coverage:.6f}")
    if output.get("log"):
        write_run_log(result.records, output["log"])
        print(f"📝 运行记录: {output['log']}")
    if getattr(args, "show_holes", False):
        print(f"{hole_tree(result.db)}")
    if result.converged:
        print(f"✅ 覆盖率收敛")
        return EXIT_OK
    print(f"❌ 达到迭代上限 {config.engine.iteration_cap} 仍未收敛")
    return EXIT_NOT_CONVERGED


def cmd_compare(args):
    config = Config.load(args)
    Config.check_ann_widths(config.widths)
    output = config.output
    if not output.get("report"):
        raise UsageError("compare 需要 --out 报告路径")
    print(f"===============对比实验===============")
    print(f"🔧 DUT: {config.dut}, 位宽: {config.widths}, 每个位宽 {config.seeds} 个种子")
    report = compare_experiment(
        config.widths,
        config.seeds,
        config.engine,
        config.network,
        dut_type=config.dut,
        workers=config.workers,
        cross_only=config.cross_only,
    )
    write_report_json(report, output["report"])
    print(format_table(report), end="")
    print(f"📝 报告: {output['report']}")
    if output.get("svg"):
        curves, labels = report_curves(report)
        render_convergence_svg(curves, labels, output["svg"])
        print(f"📈 收敛曲线: {output['svg']}")
    return EXIT_OK


def cmd_bughunt(args):
    config = Config.load(args)
    if config.dut != "alu":
        raise UsageError("bughunt 只支持 --dut alu")
    dut = DutFactory.create_dut("alu", config.width)
    constraints = constraints_from_description(dut.spec, config.constraints)
    print(f"===============失败导向测试===============")
    print(f"🔧 DUT: alu W={dut.width}, 迭代: {config.iterations}, 候选池: {config.engine.candidate_pool}")
    directed = run_failure_directed(
        dut,
        config.engine,
        config.network,
        iterations=config.iterations,
        constraints=constraints,
        coverage_model=build_coverage(config, dut),
    )
    baseline = random_baseline_failures(dut, config.engine, iterations=config.iterations, constraints=constraints)
    print(f"失败导向: {directed.failures_found}")
    print(f"随机基线: {baseline.failures_found}")
    print(f"倍数: {ratio(directed.failures_found, baseline.failures_found):.3f}")
    for record in directed.failing_records[:10]:
        op, a, b = record.stimulus.values
        print(f"🐞 op={op} a={a} b={b} -> result={record.response.values[0]}")
    if config.output.get("log"):
        write_run_log(directed.failing_records, config.output["log"])
        print(f"📝 失败激励: {config.output['log']}")
    return EXIT_OK


def cmd_report(args):
    report = read_report_json(args.input)
    if args.table or not args.svg:
        print(format_table(report), end="")
    if args.svg:
        curves, labels = report_curves(report)
        render_convergence_svg(curves, labels, args.svg)
        print(f"📈 收敛曲线: {args.svg}")
    return EXIT_OK


COMMANDS = {
    "close": cmd_close,
    "compare": cmd_compare,
    "bughunt": cmd_bughunt,
    "report": cmd_report,
}


def main(argv=None):
    logging.basicConfig(
        level=logging.DEBUG if DEBUG else logging.INFO,
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        stream=sys.stderr,
    )
    start_time = datetime.now()
    try:
        args = build_parser().parse_args(argv)
        if args.debug:
            logging.getLogger().setLevel(logging.DEBUG)
        if not args.command:
            raise UsageError("缺少子命令: close / compare / bughunt / report")
        code = COMMANDS[args.command](args)
    except SystemExit as e:
        # --help / --version
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except (ClosureError, OSError, json.JSONDecodeError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logging.debug(traceback.format_exc())
        print(f"❌ 未预期的错误: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.debug(f"运行时长: {round((datetime.now() - start_time).total_seconds(), 2)}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
