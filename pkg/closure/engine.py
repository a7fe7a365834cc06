# -*- coding: utf-8 -*-
"""
闭环验证引擎
训练阶段用随机激励收集带标签的数据，训练网络后在测试阶段由网络预测能填补覆盖空洞的激励；
另外提供失败导向的找 bug 模式，以及随机与网络方法的对比实验
"""
import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from closure import LOG_DATEFMT, LOG_FORMAT, __version__
from closure import ann
from closure.coverage import CoverageDatabase, CoverageModel, default_model
from closure.errors import ConfigError
from closure.records import (
    CellResult,
    ConvergenceCurve,
    ExperimentReport,
    RunRecord,
    SeedResult,
)
from closure.stimulus import (
    Constraint,
    Phase,
    Prng,
    StimulusSource,
    default_constraints,
    mux_select,
    random_stimulus,
    stimulus_to_bits,
    validate_constraints,
)
from duts.base_dut import BaseDut, Direction, StimulusVector, TestStatus
from duts.dut_factory import DutFactory

logger = logging.getLogger(__name__)

TARGET_STRATEGIES = ("compose", "onehot")
BIN_ORDERS = ("lowest", "random")
METHODS = ("random", "ann")


@dataclass(frozen=True)
class EngineConfig:
    # None 表示 min(4 * B, 2000)
    train_transactions: Optional[int] = None
    iteration_cap: int = 5000
    retrain_interval: int = 64
    per_bin_model_attempts: int = 3
    goal: float = 1.0
    base_seed: int = 0
    target_strategy: str = "compose"
    bin_order: str = "lowest"
    candidate_pool: int = 256

    def __post_init__(self):
        if self.train_transactions is not None and self.train_transactions < 0:
            raise ConfigError(f"train_transactions 不能为负: {self.train_transactions}")
        for name in ("iteration_cap", "retrain_interval", "per_bin_model_attempts", "candidate_pool"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须为正整数: {getattr(self, name)}")
        if not 0.0 < self.goal <= 1.0:
            raise ConfigError(f"goal 必须落在 (0, 1]: {self.goal}")
        if not 0 <= self.base_seed < 1 << 64:
            raise ConfigError(f"base_seed 必须是 64 位无符号整数: {self.base_seed}")
        if self.target_strategy not in TARGET_STRATEGIES:
            raise ConfigError(f"未知的 target_strategy: {self.target_strategy}")
        if self.bin_order not in BIN_ORDERS:
            raise ConfigError(f"未知的 bin_order: {self.bin_order}")

    def transactions_for(self, total_bins: int) -> int:
        if self.train_transactions is None:
            return min(4 * total_bins, 2000)
        return self.train_transactions


@dataclass(frozen=True)
class ModelSettings:
    """网络超参数，init_seed 为 None 时使用运行种子"""

    hidden: Optional[int] = None
    learning_rate: float = 0.5
    epochs: int = 300
    retrain_epochs: int = 30
    init_seed: Optional[int] = None

    def network_config(self, n_in: int, n_out: int, seed: int) -> ann.NetworkConfig:
        return ann.NetworkConfig.for_sizes(
            n_in,
            n_out,
            hidden=self.hidden,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            retrain_epochs=self.retrain_epochs,
            init_seed=seed if self.init_seed is None else self.init_seed,
        )


@dataclass
class ClosureResult:
    converged: bool
    test_iterations: int
    total_iterations: int
    records: List[RunRecord] = field(default_factory=list)
    coverage: float = 0.0
    network: Optional[ann.Network] = None
    db: Optional[CoverageDatabase] = None

    def test_records(self) -> List[RunRecord]:
        return [r for r in self.records if r.phase == Phase.TEST]

    def curve(self) -> ConvergenceCurve:
        """测试阶段的收敛曲线，起点为训练阶段结束时的覆盖率"""
        train = [r for r in self.records if r.phase == Phase.TRAIN]
        start = train[-1].coverage if train else 0.0
        return ConvergenceCurve.from_records(self.test_records(), start)


@dataclass
class FailureHuntResult:
    failures_found: int
    failing_stimuli: List[StimulusVector]
    records: List[RunRecord]
    training_failures: int = 0

    @property
    def failing_records(self) -> List[RunRecord]:
        return [r for r in self.records if r.phase == Phase.TEST and r.status == TestStatus.FAIL]


class _Run:
    """单次回归独占的状态：随机数流、覆盖率数据库和记录"""

    def __init__(
        self,
        dut: BaseDut,
        model: CoverageModel,
        seed: int,
        constraints: Optional[Sequence[Constraint]] = None,
        db: Optional[CoverageDatabase] = None,
    ):
        self.dut = dut
        self.model = model
        self.constraints = list(constraints) if constraints else default_constraints(dut.spec)
        validate_constraints(dut.spec, self.constraints)
        self.prng = Prng(seed)
        self.db = db or CoverageDatabase(model)
        self.records: List[RunRecord] = []

    def apply(self, stimulus: StimulusVector, phase: Phase, source: StimulusSource) -> Tuple[List[int], RunRecord]:
        response, status = self.dut.run(stimulus)
        bins, newly_hit = self.db.sample_bins(stimulus, response)
        record = RunRecord(
            iteration=len(self.records),
            phase=phase,
            source=source,
            stimulus=stimulus,
            response=response,
            status=status,
            newly_hit=tuple(newly_hit),
            coverage=round(self.db.coverage_fraction(), 6),
        )
        self.records.append(record)
        return bins, record

    def random(self) -> StimulusVector:
        return random_stimulus(self.constraints, self.prng)


def _add_pairs(training_set: ann.TrainingSet, run: _Run, bins: List[int], stimulus: StimulusVector, tag: int):
    bits = stimulus_to_bits(run.dut.spec, stimulus)
    for bin_id in bins:
        training_set.add_one_hot(bin_id, bits, tag)


def _collect(run: _Run, transactions: int) -> ann.TrainingSet:
    training_set = ann.TrainingSet(run.model.total_bins, run.dut.spec.input_bits)
    for _ in range(transactions):
        stimulus = run.random()
        bins, record = run.apply(stimulus, Phase.TRAIN, mux_select(Phase.TRAIN, False, False))
        _add_pairs(training_set, run, bins, stimulus, record.iteration)
    return training_set


def collect_training_data(
    dut: BaseDut,
    coverage_model: CoverageModel,
    config: EngineConfig,
    constraints: Optional[Sequence[Constraint]] = None,
) -> Tuple[ann.TrainingSet, CoverageDatabase, List[RunRecord]]:
    """
    用随机激励跑 train_transactions 次事务；
    每次事务落入的每个 bin 都产生一个 (one-hot(bin), 输入位向量) 样本，重复样本保留
    """
    run = _Run(dut, coverage_model, config.base_seed, constraints)
    training_set = _collect(run, config.transactions_for(coverage_model.total_bins))
    return training_set, run.db, run.records


def run_random_to_closure(
    dut: BaseDut,
    coverage_model: CoverageModel,
    config: EngineConfig,
    constraints: Optional[Sequence[Constraint]] = None,
    db: Optional[CoverageDatabase] = None,
) -> ClosureResult:
    """
    纯约束随机回归，直到覆盖率达到 goal 或迭代数达到上限
    Args:
        db: 预热过的数据库，None 时从零开始
    """
    run = _Run(dut, coverage_model, config.base_seed, constraints, db)
    iterations = 0
    while not run.db.goal_reached(config.goal) and iterations < config.iteration_cap:
        run.apply(run.random(), Phase.TEST, StimulusSource.RANDOM)
        iterations += 1
    converged = run.db.goal_reached(config.goal)
    if not converged:
        logger.warning(
            f"随机激励 {dut.DUT_TYPE} W={dut.width} seed={config.base_seed} "
            f"达到迭代上限 {config.iteration_cap} 仍未收敛 ({run.db.coverage_fraction():.4f})"
        )
    return ClosureResult(
        converged=converged,
        test_iterations=iterations,
        total_iterations=iterations,
        records=run.records,
        coverage=run.db.coverage_fraction(),
        db=run.db,
    )


class _TargetPicker:
    """按 bin_order 选择下一个仍有模型尝试次数的覆盖空洞"""

    def __init__(self, config: EngineConfig, prng: Prng):
        self.config = config
        self.prng = prng
        self.attempts: Dict[int, int] = {}

    def remaining(self, bin_id: int) -> int:
        return self.attempts.get(bin_id, self.config.per_bin_model_attempts)

    def pick(self, db: CoverageDatabase) -> Optional[int]:
        candidates = [b for b in db.uncovered() if self.remaining(b) > 0]
        if not candidates:
            return None
        if self.config.bin_order == "random":
            return candidates[self.prng.randbelow(len(candidates))]
        return candidates[0]

    def miss(self, bin_id: int, db: CoverageDatabase):
        left = self.remaining(bin_id) - 1
        self.attempts[bin_id] = left
        if left == 0:
            logger.debug(f"bin #{bin_id} {db.bin_name(bin_id)} 模型尝试次数用尽，改用随机激励")


def predict_for_bin(
    net: ann.Network,
    db: CoverageDatabase,
    bin_id: int,
    strategy: str = "compose",
) -> StimulusVector:
    """
    为覆盖空洞预测激励
    compose：cross bin 的各个成员端口取该成员 coverpoint bin 的预测值；
    空洞从未出现在训练集里，成员 coverpoint bin 则有大量样本
    """
    model = db.model
    spec = model.spec
    stimulus = ann.predict_stimulus(net, db.encode_target(bin_id), spec)
    if strategy != "compose":
        return stimulus
    kind, _, _ = model.locate(bin_id)
    if kind != "cross":
        return stimulus
    members = model.cross_members(bin_id)
    if any(cp.direction != Direction.IN for cp, _ in members):
        return stimulus
    values = list(stimulus.values)
    for cp, local in members:
        member_id = model.coverpoint_bin_id(cp, local)
        if member_id is None:
            return stimulus
        predicted = ann.predict_stimulus(net, db.encode_target(member_id), spec)
        values[cp.port_index] = predicted.values[cp.port_index]
    return StimulusVector(tuple(values))


def run_ml_to_closure(
    dut: BaseDut,
    coverage_model: CoverageModel,
    config: EngineConfig,
    settings: Optional[ModelSettings] = None,
    constraints: Optional[Sequence[Constraint]] = None,
    network: Optional[ann.Network] = None,
) -> ClosureResult:
    """
    1. 随机激励收集训练数据
    2. 训练网络（传入 network 时跳过）
    3. 循环选取覆盖空洞，由网络预测激励；预测未命中目标则扣减该 bin 的尝试次数，
       用尽后该 bin 改由随机激励覆盖；每 retrain_interval 次测试迭代用全部样本增量重训练
    """
    settings = settings or ModelSettings()
    transactions = config.transactions_for(coverage_model.total_bins)
    if transactions == 0 and network is None:
        raise ConfigError("train_transactions 为 0，训练集为空，无法训练网络")

    run = _Run(dut, coverage_model, config.base_seed, constraints)
    n_in, n_out = coverage_model.total_bins, dut.spec.input_bits
    training_set = _collect(run, transactions)
    logger.info(
        f"🧪 训练阶段完成: {transactions} 次事务, {len(training_set)} 个样本, "
        f"覆盖率 {run.db.coverage_fraction():.4f}"
    )

    if network is None:
        net = ann.init(settings.network_config(n_in, n_out, config.base_seed))
        history = ann.train(net, training_set)
        logger.info(f"🧠 网络训练完成 {list(net.config.layer_sizes)}, 最终损失 {history[-1]:.6f}")
    else:
        if (network.n_in, network.n_out) != (n_in, n_out):
            raise ConfigError(
                f"载入的网络维度 ({network.n_in}, {network.n_out}) 与覆盖率模型 ({n_in}, {n_out}) 不符"
            )
        net = network.copy()

    picker = _TargetPicker(config, run.prng)
    test_iterations = 0
    while not run.db.goal_reached(config.goal) and test_iterations < config.iteration_cap:
        target = picker.pick(run.db)
        source = mux_select(Phase.TEST, model_ready=True, fallback=target is None)
        if source == StimulusSource.MODEL:
            stimulus = predict_for_bin(net, run.db, target, config.target_strategy)
        else:
            stimulus = run.random()
        bins, record = run.apply(stimulus, Phase.TEST, source)
        _add_pairs(training_set, run, bins, stimulus, record.iteration)
        if source == StimulusSource.MODEL and target not in bins:
            picker.miss(target, run.db)
        test_iterations += 1
        if test_iterations % config.retrain_interval == 0 and not run.db.goal_reached(config.goal):
            history = ann.train(net, training_set, epochs=net.config.retrain_epochs)
            logger.debug(
                f"第 {test_iterations} 次测试迭代后重训练, 样本 {len(training_set)}, 损失 {history[-1]:.6f}"
            )

    converged = run.db.goal_reached(config.goal)
    if not converged:
        logger.warning(
            f"模型激励 {dut.DUT_TYPE} W={dut.width} seed={config.base_seed} "
            f"达到迭代上限 {config.iteration_cap} 仍未收敛 ({run.db.coverage_fraction():.4f})"
        )
    return ClosureResult(
        converged=converged,
        test_iterations=test_iterations,
        total_iterations=len(run.records),
        records=run.records,
        coverage=run.db.coverage_fraction(),
        network=net,
        db=run.db,
    )


def _failure_set(dut: BaseDut) -> ann.TrainingSet:
    return ann.TrainingSet(dut.spec.input_bits, 1)


def _add_failure_pair(training_set: ann.TrainingSet, dut: BaseDut, record: RunRecord):
    bits = stimulus_to_bits(dut.spec, record.stimulus)
    label = 1.0 if record.status == TestStatus.FAIL else 0.0
    training_set.add(bits, [label], record.iteration)


def select_candidate(scores: np.ndarray) -> int:
    """分数最高的候选，并列时取抽取顺序最靠前的"""
    return int(np.argmax(scores))


def run_failure_directed(
    dut: BaseDut,
    config: EngineConfig,
    settings: Optional[ModelSettings] = None,
    iterations: Optional[int] = None,
    candidate_pool: Optional[int] = None,
    constraints: Optional[Sequence[Constraint]] = None,
    coverage_model: Optional[CoverageModel] = None,
) -> FailureHuntResult:
    """
    失败导向测试
    1. 随机事务记录 (输入位向量 -> 通过/失败)
    2. 训练 [D, H, 1] 分类网络，FAIL 为 1
    3. 每次迭代随机抽取 candidate_pool 个候选，施加分数最高的一个并记录结果
    """
    settings = settings or ModelSettings()
    iterations = config.iteration_cap if iterations is None else iterations
    pool = candidate_pool or config.candidate_pool
    model = coverage_model or default_model(dut)
    run = _Run(dut, model, config.base_seed, constraints)
    spec = dut.spec

    training_set = _failure_set(dut)
    for _ in range(config.transactions_for(model.total_bins)):
        _, record = run.apply(run.random(), Phase.TRAIN, StimulusSource.RANDOM)
        _add_failure_pair(training_set, dut, record)
    training_failures = sum(1 for r in run.records if r.status == TestStatus.FAIL)
    logger.info(f"🧪 训练阶段完成: {len(training_set)} 次事务, 其中失败 {training_failures} 次")

    net = None
    if len(training_set):
        net = ann.init(settings.network_config(spec.input_bits, 1, config.base_seed))
        ann.train(net, training_set)

    failing: List[StimulusVector] = []
    for i in range(iterations):
        candidates = [run.random() for _ in range(pool)]
        if net is None:
            chosen, source = candidates[0], StimulusSource.RANDOM
        else:
            bits = np.array([stimulus_to_bits(spec, c) for c in candidates], dtype=np.float64)
            scores = ann.forward_batch(net, bits)[:, 0]
            chosen, source = candidates[select_candidate(scores)], StimulusSource.MODEL
        _, record = run.apply(chosen, Phase.TEST, source)
        _add_failure_pair(training_set, dut, record)
        if record.status == TestStatus.FAIL:
            failing.append(chosen)
        if (i + 1) % config.retrain_interval == 0:
            if net is None:
                net = ann.init(settings.network_config(spec.input_bits, 1, config.base_seed))
                ann.train(net, training_set)
            else:
                ann.train(net, training_set, epochs=net.config.retrain_epochs)
    logger.info(f"🐞 失败导向测试 {iterations} 次迭代, 发现失败 {len(failing)} 次")
    return FailureHuntResult(len(failing), failing, run.records, training_failures)


def random_baseline_failures(
    dut: BaseDut,
    config: EngineConfig,
    iterations: Optional[int] = None,
    constraints: Optional[Sequence[Constraint]] = None,
) -> FailureHuntResult:
    """同样预算的纯随机找 bug 基线"""
    iterations = config.iteration_cap if iterations is None else iterations
    run = _Run(dut, default_model(dut), config.base_seed, constraints)
    failing = []
    for _ in range(iterations):
        _, record = run.apply(run.random(), Phase.TEST, StimulusSource.RANDOM)
        if record.status == TestStatus.FAIL:
            failing.append(record.stimulus)
    return FailureHuntResult(len(failing), failing, run.records)


def _init_worker(level: int):
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT)


def derive_seed(base_seed: int, width: int, seed_index: int) -> int:
    return base_seed + width * 1000 + seed_index


def _run_cell(
    dut_type: str,
    width: int,
    seed: int,
    method: str,
    config: EngineConfig,
    settings: ModelSettings,
    cross_only: bool,
) -> SeedResult:
    dut = DutFactory.create_dut(dut_type, width)
    model = default_model(dut, cross_only=cross_only)
    run_config = replace(config, base_seed=seed)
    if method == "random":
        result = run_random_to_closure(dut, model, run_config)
    else:
        result = run_ml_to_closure(dut, model, run_config, settings)
    return SeedResult(
        seed=seed,
        converged=result.converged,
        iterations=result.test_iterations if result.converged else None,
        total_iterations=result.total_iterations,
        coverage=round(result.coverage, 6),
        curve=result.curve(),
    )


def compare_experiment(
    widths: Sequence[int],
    seeds_per_width: int,
    config: EngineConfig,
    settings: Optional[ModelSettings] = None,
    dut_type: str = "comparator",
    methods: Sequence[str] = METHODS,
    workers: Optional[int] = None,
    cross_only: bool = False,
) -> ExperimentReport:
    """
    每个位宽、每个种子分别跑随机和网络两种方法，种子为 base_seed + width * 1000 + seed_index；
    各次运行互不共享状态，可以并发执行，结果按 (位宽, 种子, 方法) 合并
    """
    if not widths:
        raise ConfigError("widths 不能为空")
    if seeds_per_width < 1:
        raise ConfigError(f"seeds 必须为正整数: {seeds_per_width}")
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"未知的方法: {method}")
    settings = settings or ModelSettings()
    workers = workers or int(os.environ.get("CLOSURE_WORKERS", 4))

    jobs = [
        (width, seed_index, method)
        for width in widths
        for seed_index in range(seeds_per_width)
        for method in methods
    ]
    results: Dict[Tuple[int, int, str], SeedResult] = {}

    def job_args(width, seed_index, method):
        seed = derive_seed(config.base_seed, width, seed_index)
        return dut_type, width, seed, method, config, settings, cross_only

    if workers <= 1:
        for key in jobs:
            results[key] = _run_cell(*job_args(*key))
    else:
        # 每次运行在独立进程里执行
        with ProcessPoolExecutor(
            max_workers=min(workers, len(jobs)),
            mp_context=multiprocessing.get_context("spawn"),
            initializer=_init_worker,
            initargs=(logging.getLogger().getEffectiveLevel(),),
        ) as executor:
            futures = {executor.submit(_run_cell, *job_args(*key)): key for key in jobs}
            for future in as_completed(futures):
                key = futures[future]
                results[key] = future.result()
                logger.debug(f"完成 W={key[0]} seed#{key[1]} {key[2]}")

    report = ExperimentReport(
        dut=dut_type,
        widths=list(widths),
        seeds_per_width=seeds_per_width,
        iteration_cap=config.iteration_cap,
        methods=list(methods),
        config={
            "engine": asdict(config),
            "network": asdict(settings),
            "cross_only": cross_only,
        },
        version=__version__,
        timestamp=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    )
    for width in widths:
        for method in methods:
            cell = CellResult(width, method)
            cell.seeds = [results[(width, i, method)] for i in range(seeds_per_width)]
            report.cells[(width, method)] = cell
            logger.info(
                f"W={width} {method}: 中位数 {cell.median if cell.converged else 'NOT-CONVERGED'}, "
                f"收敛 {cell.converged_seeds}/{seeds_per_width}"
            )
    return report
