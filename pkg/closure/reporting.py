# -*- coding: utf-8 -*-
"""
持久化与展示
运行日志 CSV、实验报告 JSON、对比表格和覆盖率收敛曲线 SVG
"""
import csv
import json
import math
from typing import Dict, List, Optional, Sequence

from natsort import natsorted

from closure.errors import ReportError
from closure.records import (
    CellResult,
    ConvergenceCurve,
    ExperimentReport,
    RunRecord,
    SeedResult,
)
from closure.stimulus import Phase, StimulusSource
from duts.base_dut import ResponseVector, StimulusVector, TestStatus

LOG_HEADER = [
    "iteration",
    "phase",
    "source",
    "stimulus_hex",
    "response_hex",
    "status",
    "newly_hit",
    "coverage",
]
REPORT_SCHEMA = 1
METHOD_TITLES = {
    "random": "Constrained Random Stimuli",
    "ann": "ANN Based Stimuli",
}


def _hex(values: Sequence[int]) -> str:
    return "|".join(format(v, "x") for v in values)


def _unhex(text: str) -> tuple:
    return tuple(int(v, 16) for v in text.split("|"))


def write_run_log(records: Sequence[RunRecord], path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.iteration,
                    r.phase.value,
                    r.source.value,
                    _hex(r.stimulus.values),
                    _hex(r.response.values),
                    r.status.value,
                    ";".join(str(b) for b in r.newly_hit),
                    f"{r.coverage:.6f}",
                ]
            )


def read_run_log(path: str) -> List[RunRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != LOG_HEADER:
            raise ReportError(f"{path} 不是运行日志: 表头 {header}")
        for row in reader:
            try:
                iteration, phase, source, stim, resp, status, newly, cov = row
                records.append(
                    RunRecord(
                        iteration=int(iteration),
                        phase=Phase(phase),
                        source=StimulusSource(source),
                        stimulus=StimulusVector(_unhex(stim)),
                        response=ResponseVector(_unhex(resp)),
                        status=TestStatus(status),
                        newly_hit=tuple(int(b) for b in newly.split(";") if b),
                        coverage=float(cov),
                    )
                )
            except ValueError as e:
                raise ReportError(f"{path} 第 {reader.line_num} 行格式错误: {e}") from e
    return records


def _number(value: Optional[float]):
    """整数值输出为整数"""
    if value is None:
        return None
    if float(value).is_integer():
        return int(value)
    return value


def _curve_to_json(curve: Optional[ConvergenceCurve]):
    if curve is None:
        return None
    return [[x, _number(y)] for x, y in curve.points]


def report_to_dict(report: ExperimentReport) -> Dict:
    results = {}
    for width in natsorted(report.widths):
        row = {}
        for method in report.methods:
            cell = report.cell(width, method)
            if cell is None:
                continue
            row[method] = {
                "median": _number(cell.median),
                "min": cell.min,
                "max": cell.max,
                "converged_seeds": cell.converged_seeds,
                "seeds": [
                    {
                        "seed": s.seed,
                        "converged": s.converged,
                        "iterations": s.iterations,
                        "total_iterations": s.total_iterations,
                        "coverage": _number(s.coverage),
                        "curve": _curve_to_json(s.curve),
                    }
                    for s in cell.seeds
                ],
            }
        results[str(width)] = row
    return {
        "schema": REPORT_SCHEMA,
        "tool_version": report.version,
        "timestamp": report.timestamp,
        "dut": report.dut,
        "widths": list(report.widths),
        "seeds_per_width": report.seeds_per_width,
        "iteration_cap": report.iteration_cap,
        "methods": list(report.methods),
        "config": report.config,
        "results": results,
    }


def report_from_dict(data: Dict) -> ExperimentReport:
    if not isinstance(data, dict) or data.get("schema") != REPORT_SCHEMA:
        raise ReportError(f"不支持的报告格式，schema 应为 {REPORT_SCHEMA}")
    try:
        report = ExperimentReport(
            dut=data["dut"],
            widths=[int(w) for w in data["widths"]],
            seeds_per_width=int(data["seeds_per_width"]),
            iteration_cap=int(data["iteration_cap"]),
            methods=list(data["methods"]),
            config=data.get("config", {}),
            version=data.get("tool_version", ""),
            timestamp=data.get("timestamp", ""),
        )
        for width_key, row in data["results"].items():
            width = int(width_key)
            for method, cell_data in row.items():
                cell = CellResult(width, method)
                for s in cell_data["seeds"]:
                    curve = s.get("curve")
                    cell.seeds.append(
                        SeedResult(
                            seed=int(s["seed"]),
                            converged=bool(s["converged"]),
                            iterations=s["iterations"],
                            total_iterations=int(s["total_iterations"]),
                            coverage=float(s["coverage"]),
                            curve=ConvergenceCurve(tuple((int(x), float(y)) for x, y in curve))
                            if curve
                            else None,
                        )
                    )
                if len(cell.seeds) != report.seeds_per_width:
                    raise ReportError(f"W={width} {method} 的种子结果数量与 seeds_per_width 不符")
                report.cells[(width, method)] = cell
    except (KeyError, TypeError, ValueError) as e:
        raise ReportError(f"报告内容不完整: {e}") from e
    return report


def write_report_json(report: ExperimentReport, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report_to_dict(report), f, ensure_ascii=False, indent=2)
        f.write("\n")


def read_report_json(path: str) -> ExperimentReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ReportError(f"无法读取报告 {path}: {e}") from e
    return report_from_dict(data)


def _cell_text(cell: Optional[CellResult], cap: int) -> str:
    if cell is None:
        return "-"
    if not cell.converged:
        return f">{cap}"
    median = cell.median
    return str(int(median)) if float(median).is_integer() else f"{median:.1f}"


def format_table(report: ExperimentReport) -> str:
    """随机与网络方法的对比表，每个位宽一行，未收敛显示为 >cap"""
    methods = [m for m in ("random", "ann") if m in report.methods] or list(report.methods)
    titles = ["Width"] + [METHOD_TITLES.get(m, m) for m in methods]
    show_ratio = methods == ["random", "ann"]
    if show_ratio:
        titles.append("ANN/Random")

    rows = []
    for width in natsorted(report.widths):
        cells = [report.cell(width, m) for m in methods]
        row = [str(width)] + [_cell_text(c, report.iteration_cap) for c in cells]
        if show_ratio:
            random_cell, ann_cell = cells
            if random_cell and ann_cell and random_cell.converged and ann_cell.converged and random_cell.median:
                row.append(f"{ann_cell.median / random_cell.median:.3f}")
            else:
                row.append("-")
        rows.append(row)

    widths = [max([len(titles[i])] + [len(r[i]) for r in rows]) for i in range(len(titles))]

    def line(cols):
        return " | ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()

    out = [line(titles), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


COLORS = ["#007AFF", "#FF3B30", "#34C759", "#FF9500", "#AF52DE", "#5AC8FA", "#8E8E93", "#FFCC00"]


def render_convergence_svg(curves: Sequence[ConvergenceCurve], labels: Sequence[str], path: str):
    """
    线性坐标，横轴为迭代次数，纵轴为覆盖率 [0, 1]，每条曲线一条 polyline
    """
    if not curves:
        raise ReportError("没有可绘制的曲线")
    for curve in curves:
        if len(curve.points) < 2:
            raise ReportError("每条曲线至少需要两个点")
    if len(labels) != len(curves):
        raise ReportError("曲线数量与标签数量不符")

    width, height = 800, 500
    margin = {"top": 50, "right": 180, "bottom": 60, "left": 70}
    chart_width = width - margin["left"] - margin["right"]
    chart_height = height - margin["top"] - margin["bottom"]
    max_x = max(curve.points[-1][0] for curve in curves) or 1
    x_scale = chart_width / max_x
    bottom = height - margin["bottom"]

    def px(x):
        return f"{margin['left'] + x * x_scale:.2f}"

    def py(y):
        return f"{bottom - y * chart_height:.2f}"

    svg = f'<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">\n'
    svg += f'  <rect x="0" y="0" width="{width}" height="{height}" fill="#FFFFFF"/>\n'
    svg += f'  <text x="{margin["left"] + chart_width / 2:.2f}" y="28" text-anchor="middle" font-size="16" font-weight="bold">Coverage Convergence</text>\n'

    # Y 轴刻度
    for i in range(11):
        y = i / 10
        svg += f'  <line x1="{margin["left"]}" y1="{py(y)}" x2="{margin["left"] + chart_width}" y2="{py(y)}" stroke="#E5E5EA" stroke-width="1"/>\n'
        svg += f'  <text x="{margin["left"] - 8}" y="{float(py(y)) + 4:.2f}" text-anchor="end" font-size="11" fill="#333">{y:.1f}</text>\n'

    # X 轴刻度
    for i in range(6):
        x = max_x * i / 5
        label = f"{x:.0f}" if max_x >= 5 else f"{x:.1f}"
        svg += f'  <text x="{px(x)}" y="{bottom + 20}" text-anchor="middle" font-size="11" fill="#333">{label}</text>\n'

    svg += f'  <line x1="{margin["left"]}" y1="{bottom}" x2="{margin["left"] + chart_width}" y2="{bottom}" stroke="#333" stroke-width="1"/>\n'
    svg += f'  <line x1="{margin["left"]}" y1="{margin["top"]}" x2="{margin["left"]}" y2="{bottom}" stroke="#333" stroke-width="1"/>\n'
    svg += f'  <text x="{margin["left"] + chart_width / 2:.2f}" y="{bottom + 45}" text-anchor="middle" font-size="13" fill="#333">Iteration</text>\n'
    svg += f'  <text x="20" y="{margin["top"] + chart_height / 2:.2f}" text-anchor="middle" font-size="13" fill="#333" transform="rotate(-90, 20, {margin["top"] + chart_height / 2:.2f})">Coverage</text>\n'

    for i, curve in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        points = " ".join(f"{px(x)},{py(y)}" for x, y in curve.points)
        svg += f'  <polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>\n'

    # 图例
    legend_x = width - margin["right"] + 15
    for i, label in enumerate(labels):
        color = COLORS[i % len(COLORS)]
        y = margin["top"] + 10 + i * 20
        svg += f'  <line x1="{legend_x}" y1="{y}" x2="{legend_x + 25}" y2="{y}" stroke="{color}" stroke-width="2"/>\n'
        svg += f'  <text x="{legend_x + 32}" y="{y + 4}" font-size="12" fill="#333">{_escape(label)}</text>\n'

    svg += "</svg>\n"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(svg)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def report_curves(report: ExperimentReport, seed_index: int = 0):
    """每个 (位宽, 方法) 取一个种子的曲线，用于从报告重新生成图表"""
    curves, labels = [], []
    for width in natsorted(report.widths):
        for method in report.methods:
            cell = report.cell(width, method)
            if cell is None or seed_index >= len(cell.seeds):
                continue
            curve = cell.seeds[seed_index].curve
            if curve is not None and len(curve.points) >= 2:
                curves.append(curve)
                labels.append(f"W={width} {method}")
    return curves, labels


def ratio(numerator: int, denominator: int) -> float:
    if denominator == 0:
        return math.inf if numerator else 1.0
    return numerator / denominator
