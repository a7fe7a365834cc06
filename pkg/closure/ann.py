# -*- coding: utf-8 -*-
"""
前馈神经网络
全部层使用 sigmoid，损失为 MSE，逐样本 SGD 反向传播训练；
输入为覆盖率目标的 one-hot 编码，输出为输入激励的各个位
"""
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from closure.errors import ConfigError, PreconditionError
from closure.stimulus import Prng, bits_to_stimulus
from duts.base_dut import DutSpec, StimulusVector

logger = logging.getLogger(__name__)

# sigmoid 输入截断，保证输出严格落在 (0, 1)
Z_CLIP = 36.0


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -Z_CLIP, Z_CLIP)))


def hidden_size(n_in: int, n_out: int) -> int:
    """默认隐藏层宽度"""
    return max(8, math.ceil((n_in + n_out) / 2))


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: Tuple[int, ...]
    learning_rate: float = 0.5
    epochs: int = 300
    init_seed: int = 0
    activation: str = "sigmoid"
    # 增量重训练的轮数，从当前参数继续训练
    retrain_epochs: int = 30

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise PreconditionError(f"网络层数或宽度非法: {list(self.layer_sizes)}")
        if self.activation != "sigmoid":
            raise PreconditionError(f"不支持的激活函数: {self.activation}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise PreconditionError(f"学习率非法: {self.learning_rate}")
        if self.epochs < 1 or self.retrain_epochs < 1:
            raise PreconditionError("epochs 必须为正整数")

    @classmethod
    def for_sizes(cls, n_in: int, n_out: int, hidden: Optional[int] = None, **kwargs) -> "NetworkConfig":
        """[n_in, H, n_out] 单隐藏层结构"""
        return cls((n_in, hidden or hidden_size(n_in, n_out), n_out), **kwargs)


class Network:
    """
    每层一个权重矩阵 (n_out × n_in) 和偏置向量
    prng 延续初始化时的随机流，用于每轮打乱样本顺序
    """

    def __init__(self, config: NetworkConfig, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.config = config
        self.weights = weights
        self.biases = biases
        self.prng = Prng(config.init_seed)

    @property
    def n_in(self) -> int:
        return self.config.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.config.layer_sizes[-1]

    def parameters(self) -> Iterator[np.ndarray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def copy(self) -> "Network":
        net = Network(
            self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )
        net.prng.state = self.prng.state
        return net


def init(config: NetworkConfig) -> Network:
    """
    均匀分布 [-r, r] 初始化权重，r = sqrt(6 / (fan_in + fan_out))，偏置为 0
    按层顺序、行优先从 splitmix64 流中取数
    """
    prng = Prng(config.init_seed)
    weights, biases = [], []
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        r = math.sqrt(6.0 / (fan_in + fan_out))
        u = prng.random_array(fan_out * fan_in)
        weights.append(((2.0 * u - 1.0) * r).reshape(fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    net = Network(config, weights, biases)
    net.prng.state = prng.state
    return net


def _check_input(net: Network, x: np.ndarray):
    if x.shape != (net.n_in,):
        raise PreconditionError(f"输入维度 {x.shape} 与网络输入 {net.n_in} 不符")


def _sparse(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.flatnonzero(x)
    return idx, x[idx]


def _trace(net: Network, idx: np.ndarray, val: np.ndarray) -> List[np.ndarray]:
    """前向传播并保留每层激活；第一层只取输入非零的列"""
    a = sigmoid(net.weights[0][:, idx] @ val + net.biases[0])
    acts = [a]
    for w, b in zip(net.weights[1:], net.biases[1:]):
        a = sigmoid(w @ a + b)
        acts.append(a)
    return acts


def _deltas(net: Network, acts: List[np.ndarray], t: np.ndarray) -> List[np.ndarray]:
    """L = mean((y - t)^2) 对各层加权输入的梯度"""
    y = acts[-1]
    delta = (2.0 / net.n_out) * (y - t) * y * (1.0 - y)
    deltas = [delta]
    for layer in range(len(net.weights) - 1, 0, -1):
        a = acts[layer - 1]
        delta = (net.weights[layer].T @ delta) * a * (1.0 - a)
        deltas.append(delta)
    deltas.reverse()
    return deltas


def forward(net: Network, x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_input(net, x)
    idx, val = _sparse(x)
    return _trace(net, idx, val)[-1]


def forward_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """对矩阵的每一行做前向传播"""
    a = np.asarray(xs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.n_in:
        raise PreconditionError(f"输入维度 {a.shape} 与网络输入 {net.n_in} 不符")
    for w, b in zip(net.weights, net.biases):
        a = sigmoid(a @ w.T + b)
    return a


def loss(net: Network, x: Sequence[float], t: Sequence[float]) -> float:
    y = forward(net, x)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (net.n_out,):
        raise PreconditionError(f"目标维度 {t.shape} 与网络输出 {net.n_out} 不符")
    return float(np.mean((y - t) ** 2))


def gradients(net: Network, x: Sequence[float], t: Sequence[float]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """反向传播得到的完整梯度 [(dW, db), ...]"""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    _check_input(net, x)
    acts = _trace(net, np.arange(net.n_in), x)
    deltas = _deltas(net, acts, t)
    inputs = [x] + acts[:-1]
    return [(np.outer(d, a), d.copy()) for d, a in zip(deltas, inputs)]


class TrainingSet:
    """
    训练样本集合
    特征按稀疏形式（非零下标、取值）保存，one-hot 特征只占一个下标
    """

    def __init__(self, n_in: int, n_out: int):
        self.n_in = n_in
        self.n_out = n_out
        self.feature_idx: List[np.ndarray] = []
        self.feature_val: List[np.ndarray] = []
        self.targets: List[np.ndarray] = []
        self.tags: List[int] = []
        # 每个样本都恰好只有一个取 1 的特征
        self.one_hot = True

    def __len__(self):
        return len(self.targets)

    def add(self, feature: Sequence[float], target: Sequence[float], tag: int = 0):
        feature = np.asarray(feature, dtype=np.float64)
        if feature.shape != (self.n_in,):
            raise PreconditionError(f"特征长度 {feature.shape} 应为 {self.n_in}")
        idx, val = _sparse(feature)
        self._append(idx, val, target, tag)

    def add_one_hot(self, index: int, target: Sequence[float], tag: int = 0):
        if not 0 <= index < self.n_in:
            raise PreconditionError(f"one-hot 下标越界: {index}")
        self._append(np.array([index]), np.ones(1), target, tag)

    def _append(self, idx: np.ndarray, val: np.ndarray, target: Sequence[float], tag: int):
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (self.n_out,):
            raise PreconditionError(f"目标长度 {target.shape} 应为 {self.n_out}")
        if np.any(val < 0) or np.any(val > 1) or np.any(target < 0) or np.any(target > 1):
            raise PreconditionError("特征和目标必须落在 [0, 1]")
        if len(idx) != 1 or val[0] != 1.0:
            self.one_hot = False
        self.feature_idx.append(idx)
        self.feature_val.append(val)
        self.targets.append(target)
        self.tags.append(tag)

    def feature(self, i: int) -> np.ndarray:
        x = np.zeros(self.n_in)
        x[self.feature_idx[i]] = self.feature_val[i]
        return x

    def pairs(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for i in range(len(self)):
            yield self.feature(i), self.targets[i]


def _check_set(net: Network, training_set: TrainingSet):
    if len(training_set) == 0:
        raise ConfigError("训练集为空")
    if training_set.n_in != net.n_in or training_set.n_out != net.n_out:
        raise PreconditionError(
            f"训练集维度 ({training_set.n_in}, {training_set.n_out}) "
            f"与网络 ({net.n_in}, {net.n_out}) 不符"
        )


def mse(net: Network, training_set: TrainingSet) -> float:
    """训练集上的平均损失"""
    _check_set(net, training_set)
    total = 0.0
    for idx, val, t in zip(training_set.feature_idx, training_set.feature_val, training_set.targets):
        y = _trace(net, idx, val)[-1]
        total += float(np.mean((y - t) ** 2))
    return total / len(training_set)


def _sigmoid_into(a: np.ndarray) -> np.ndarray:
    """原地计算 sigmoid"""
    np.clip(a, -Z_CLIP, Z_CLIP, out=a)
    np.negative(a, out=a)
    np.exp(a, out=a)
    a += 1.0
    return np.reciprocal(a, out=a)


def _train_one_hot(net: Network, training_set: TrainingSet, lr: float, epochs: int, order: List[int]) -> List[float]:
    """
    单隐藏层、one-hot 输入的逐样本 SGD
    第一层转置后按行更新，中间量写入预分配的缓冲区；结果与通用路径只差浮点舍入
    """
    w1, b0, b1 = net.weights[1], net.biases[0], net.biases[1]
    w0t = np.ascontiguousarray(net.weights[0].T)
    rows = [int(idx[0]) for idx in training_set.feature_idx]
    targets = training_set.targets
    h, dh, gh = np.empty_like(b0), np.empty_like(b0), np.empty_like(b0)
    y, dy = np.empty_like(b1), np.empty_like(b1)
    outer = np.empty_like(w1)
    # dy 与 dh 直接带上学习率
    scale = 2.0 * lr / net.n_out
    history = []
    for epoch in range(epochs):
        net.prng.shuffle(order)
        total = 0.0
        for k in order:
            row = w0t[rows[k]]
            _sigmoid_into(np.add(row, b0, out=h))
            np.dot(w1, h, out=y)
            y += b1
            _sigmoid_into(y)
            np.subtract(y, targets[k], out=dy)
            total += float(np.dot(dy, dy))
            dy *= y
            dy *= 1.0 - y
            dy *= scale
            np.dot(dy, w1, out=dh)
            np.subtract(1.0, h, out=gh)
            gh *= h
            dh *= gh
            np.multiply(dy[:, None], h, out=outer)
            w1 -= outer
            b1 -= dy
            row -= dh
            b0 -= dh
        history.append(total / (net.n_out * len(order)))
        if (epoch + 1) % 100 == 0:
            logger.debug(f"epoch {epoch + 1}/{epochs} loss={history[-1]:.6f}")
    net.weights[0][...] = w0t.T
    return history


def train(
    net: Network,
    training_set: TrainingSet,
    config: Optional[NetworkConfig] = None,
    epochs: Optional[int] = None,
) -> List[float]:
    """
    逐样本 SGD
    Args:
        config: 学习率与轮数来源，默认使用网络自身的配置
        epochs: 覆盖配置中的轮数，用于增量重训练
    Returns:
        每轮的平均损失（按更新前的前向结果统计）
    """
    _check_set(net, training_set)
    config = config or net.config
    epochs = epochs or config.epochs
    lr = config.learning_rate
    order = list(range(len(training_set)))
    if len(net.weights) == 2 and training_set.one_hot:
        return _train_one_hot(net, training_set, lr, epochs, order)
    history = []
    w0, b0 = net.weights[0], net.biases[0]
    for epoch in range(epochs):
        net.prng.shuffle(order)
        total = 0.0
        for i in order:
            idx = training_set.feature_idx[i]
            val = training_set.feature_val[i]
            t = training_set.targets[i]
            acts = _trace(net, idx, val)
            total += float(np.mean((acts[-1] - t) ** 2))
            if lr == 0.0:
                continue
            deltas = _deltas(net, acts, t)
            for layer in range(len(net.weights) - 1, 0, -1):
                net.weights[layer] -= lr * np.outer(deltas[layer], acts[layer - 1])
                net.biases[layer] -= lr * deltas[layer]
            w0[:, idx] -= lr * np.outer(deltas[0], val)
            b0 -= lr * deltas[0]
        history.append(total / len(order))
        if (epoch + 1) % 100 == 0:
            logger.debug(f"epoch {epoch + 1}/{epochs} loss={history[-1]:.6f}")
    return history


def gradient_check(net: Network, x: Sequence[float], t: Sequence[float], h: float = 1e-5) -> float:
    """
    反向传播梯度与中心差分的最大相对误差
    相对误差 = |g_bp - g_fd| / max(1e-8, |g_bp| + |g_fd|)
    """
    analytic = gradients(net, x, t)
    worst = 0.0
    for (dw, db), w, b in zip(analytic, net.weights, net.biases):
        for grad, param in ((dw, w), (db, b)):
            for k in np.ndindex(param.shape):
                saved = param[k]
                param[k] = saved + h
                plus = loss(net, x, t)
                param[k] = saved - h
                minus = loss(net, x, t)
                param[k] = saved
                g_fd = (plus - minus) / (2.0 * h)
                g_bp = grad[k]
                err = abs(g_bp - g_fd) / max(1e-8, abs(g_bp) + abs(g_fd))
                worst = max(worst, err)
    return worst


def predict_bits(net: Network, target: Sequence[float]) -> List[int]:
    """输出 >= 0.5 取 1"""
    y = forward(net, target)
    return [1 if v >= 0.5 else 0 for v in y]


def predict_stimulus(net: Network, target: Sequence[float], spec: DutSpec) -> StimulusVector:
    if net.n_out != spec.input_bits:
        raise PreconditionError(f"网络输出 {net.n_out} 与输入位宽 {spec.input_bits} 不符")
    return bits_to_stimulus(spec, predict_bits(net, target))


def network_to_dict(net: Network) -> dict:
    return {
        "layer_sizes": list(net.config.layer_sizes),
        "activation": net.config.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "init_seed": net.config.init_seed,
        # 打乱样本用的随机流位置，载入后继续训练与保存前逐位一致
        "prng_state": net.prng.state,
    }


def network_from_dict(data: dict, config: Optional[NetworkConfig] = None) -> Network:
    """
    Args:
        config: 提供学习率、轮数等训练参数；层结构和种子以文件为准
    """
    try:
        sizes = tuple(data["layer_sizes"])
        base = config or NetworkConfig(sizes)
        net_config = replace(
            base,
            layer_sizes=sizes,
            activation=data.get("activation", "sigmoid"),
            init_seed=int(data["init_seed"]),
        )
        weights = [np.array(w, dtype=np.float64) for w in data["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"模型文件格式错误: {e}") from e
    if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
        raise ConfigError("模型文件层数不符")
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if weights[i].shape != (fan_out, fan_in) or biases[i].shape != (fan_out,):
            raise ConfigError(f"模型文件第 {i} 层维度不符")
        if not (np.all(np.isfinite(weights[i])) and np.all(np.isfinite(biases[i]))):
            raise ConfigError(f"模型文件第 {i} 层存在非有限参数")
    net = Network(net_config, weights, biases)
    if "prng_state" in data:
        try:
            state = int(data["prng_state"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"模型文件 prng_state 非法: {e}") from e
        if not 0 <= state < 1 << 64:
            raise ConfigError(f"模型文件 prng_state 越界: {state}")
        net.prng.state = state
    else:
        # 旧文件没有记录随机流位置，取初始化刚结束时的位置
        net.prng.skip(sum(w.size for w in weights))
    return net


def save_network(net: Network, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f)


def load_network(path: str, config: Optional[NetworkConfig] = None) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return network_from_dict(data, config)
