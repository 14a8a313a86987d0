# ABOUTME: Three-layer GCN plus two fully connected layers with mean-pool readout, trained with Adam on MAPE.
# ABOUTME: Hand-written forward/backward over block-diagonal sparse batches, gradient checks, and checkpoint I/O.

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from cellgnn.cellgraph import CellGraph, FeatureLayout
from cellgnn.dataset import NormalizationSpec
from cellgnn.errors import DataError, DatasetFormatError, DivergenceError

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "W2", "W3", "W4", "b4", "W5", "b5")
HIDDEN = 128


@dataclass
class ModelParams:
    """
    Weights of the network, row-vector convention.

    W1 (in_dim x h), W2 and W3 (h x h) are the GCN layers without bias;
    W4 (h x h) with b4 (h) and W5 (h x 1) with b5 (1) are the dense head.
    """

    layout: FeatureLayout
    tensors: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def in_dim(self) -> int:
        return self.tensors["W1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.tensors["W1"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, {name: value.copy() for name, value in self.tensors.items()})

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self.tensors.items()}


def _shapes(in_dim: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "W1": (in_dim, hidden),
        "W2": (hidden, hidden),
        "W3": (hidden, hidden),
        "W4": (hidden, hidden),
        "b4": (hidden,),
        "W5": (hidden, 1),
        "b5": (1,),
    }


def init(layout: FeatureLayout, seed: int, hidden: int = HIDDEN) -> ModelParams:
    """
    He-initialized parameters: weights ~ N(0, sqrt(2 / fan_in)), biases zero.

    Args:
        layout: Feature layout; sets the input width.
        seed: RNG seed.
        hidden: Hidden width.

    Returns:
        ModelParams.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(layout.width, hidden).items():
        if name.startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
    return ModelParams(layout, tensors)


@dataclass
class GraphBatch:
    """Ragged graphs packed into one block-diagonal operator."""

    adjacency: sparse.csr_matrix
    pool: sparse.csr_matrix
    features: np.ndarray
    targets: Optional[np.ndarray]
    layout: FeatureLayout

    @property
    def size(self) -> int:
        return self.pool.shape[0]


def collate(graphs: Sequence[CellGraph]) -> GraphBatch:
    """
    Pack graphs into a block-diagonal propagation operator and a mean-pool matrix.

    Raises:
        ValueError: On an empty batch or mixed layouts.
    """
    if not graphs:
        raise ValueError("cannot collate an empty batch")
    layout = graphs[0].layout
    rows, cols, values, pool_rows, pool_cols, pool_values = [], [], [], [], [], []
    offset = 0
    for index, graph in enumerate(graphs):
        if graph.layout is not layout:
            raise ValueError(f"batch mixes layouts {layout.name} and {graph.layout.name}")
        r, c, v = graph.adjacency_entries
        rows.append(r + offset)
        cols.append(c + offset)
        values.append(v)
        n = graph.num_nodes
        pool_rows.append(np.full(n, index, dtype=np.int64))
        pool_cols.append(np.arange(offset, offset + n, dtype=np.int64))
        pool_values.append(np.full(n, 1.0 / n))
        offset += n
    adjacency = sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, offset)
    )
    pool = sparse.csr_matrix(
        (np.concatenate(pool_values), (np.concatenate(pool_rows), np.concatenate(pool_cols))),
        shape=(len(graphs), offset),
    )
    targets = None
    if all(g.target is not None for g in graphs):
        targets = np.array([g.target for g in graphs], dtype=np.float64)
    features = np.vstack([g.features for g in graphs])
    return GraphBatch(adjacency, pool, features, targets, layout)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def forward(params: ModelParams, batch: GraphBatch, cache: Optional[dict] = None) -> np.ndarray:
    """
    Predict one scalar per graph.

    H_i = ReLU(A H_{i-1} W_i) for the three GCN layers, g = mean of H_3 over
    nodes, out = ReLU(g W4 + b4) W5 + b5.

    Raises:
        ValueError: If the feature width does not match the parameters.
    """
    if batch.features.shape[1] != params.in_dim:
        raise ValueError(f"feature width {batch.features.shape[1]} does not match model input {params.in_dim}")
    h = batch.features
    for i, name in enumerate(("W1", "W2", "W3"), start=1):
        mixed = batch.adjacency @ h
        pre = mixed @ params[name]
        if cache is not None:
            cache[f"M{i}"] = mixed
            cache[f"Z{i}"] = pre
        h = _relu(pre)
    pooled = batch.pool @ h
    pre4 = pooled @ params["W4"] + params["b4"]
    h4 = _relu(pre4)
    out = (h4 @ params["W5"] + params["b5"]).ravel()
    if cache is not None:
        cache.update(G=pooled, Z4=pre4, H4=h4)
    return out


def mape_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean absolute percentage error and its gradient with respect to pred.

    The subgradient at pred == target is 0.

    Raises:
        ValueError: If any target is not positive.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if np.any(target <= 0):
        raise ValueError("MAPE targets must be positive")
    n = len(target)
    loss = 100.0 / n * float(np.sum(np.abs(pred - target) / target))
    grad = 100.0 / n * np.sign(pred - target) / target
    return loss, grad


def backward(params: ModelParams, batch: GraphBatch) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Reverse-mode gradients of the batch-mean MAPE.

    Returns:
        (loss, name -> gradient) with gradients shaped like the parameters.
    """
    if batch.targets is None:
        raise ValueError("backward needs a batch with targets")
    cache: dict = {}
    pred = forward(params, batch, cache)
    loss, d_out = mape_loss(pred, batch.targets)
    grads: Dict[str, np.ndarray] = {}

    d_out = d_out[:, None]
    grads["W5"] = cache["H4"].T @ d_out
    grads["b5"] = d_out.sum(axis=0)
    d_pre4 = (d_out @ params["W5"].T) * (cache["Z4"] > 0)
    grads["W4"] = cache["G"].T @ d_pre4
    grads["b4"] = d_pre4.sum(axis=0)
    d_h = batch.pool.T @ (d_pre4 @ params["W4"].T)
    for i, name in ((3, "W3"), (2, "W2"), (1, "W1")):
        d_pre = d_h * (cache[f"Z{i}"] > 0)
        grads[name] = cache[f"M{i}"].T @ d_pre
        if i > 1:
            d_h = batch.adjacency.T @ (d_pre @ params[name].T)
    return loss, grads


def _activation_pattern(params: ModelParams, batch: GraphBatch) -> Tuple[np.ndarray, ...]:
    cache: dict = {}
    pred = forward(params, batch, cache)
    return tuple(cache[k] > 0 for k in ("Z1", "Z2", "Z3", "Z4")) + (np.sign(pred - batch.targets),)


def finite_difference_gradients(
    params: ModelParams, batch: GraphBatch, h: float = 1e-5
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Central finite differences of the batch MAPE for every parameter entry.

    Returns:
        (gradients, valid) where valid marks entries whose +/-h perturbation
        keeps every ReLU and the loss sign on the same side of its kink.
    """
    base = _activation_pattern(params, batch)
    grads: Dict[str, np.ndarray] = {}
    valid: Dict[str, np.ndarray] = {}
    shifted = params.copy()
    for name in PARAM_NAMES:
        tensor = shifted.tensors[name]
        grad = np.zeros_like(tensor)
        ok = np.ones(tensor.shape, dtype=bool)
        for index in np.ndindex(tensor.shape):
            original = tensor[index]
            losses = []
            for step in (h, -h):
                tensor[index] = original + step
                pattern = _activation_pattern(shifted, batch)
                if any(not np.array_equal(a, b) for a, b in zip(pattern, base)):
                    ok[index] = False
                losses.append(mape_loss(forward(shifted, batch), batch.targets)[0])
            tensor[index] = original
            grad[index] = (losses[0] - losses[1]) / (2 * h)
        grads[name] = grad
        valid[name] = ok
    return grads, valid


# --- Optimization ----------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 5000
    lr0: float = 1e-4
    lr_halving_period: int = 500
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    valid_interval: int = 10
    hidden: int = HIDDEN

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr_halving_period", "valid_interval", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr0 < 0:
            raise ValueError(f"lr0 must be non-negative, got {self.lr0}")


@dataclass
class OptimizerState:
    """Adam moments, step counter and current learning rate."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-4

    @classmethod
    def zeros_like(cls, params: ModelParams, lr: float) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(value) for name, value in params.tensors.items()},
            v={name: np.zeros_like(value) for name, value in params.tensors.items()},
            lr=lr,
        )


def learning_rate(epoch: int, config: TrainConfig) -> float:
    """lr0 halved after every `lr_halving_period` epochs (epochs count from 1)."""
    return config.lr0 * 0.5 ** ((epoch - 1) // config.lr_halving_period)


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: OptimizerState, config: TrainConfig) -> None:
    """In-place bias-corrected Adam update at state.lr."""
    state.step += 1
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step
    for name in PARAM_NAMES:
        g = grads[name]
        state.m[name] = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        state.v[name] = config.beta2 * state.v[name] + (1.0 - config.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        params.tensors[name] -= state.lr * m_hat / (np.sqrt(v_hat) + config.eps)


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    log: pd.DataFrame
    best_valid: Optional[float]
    last_epoch: int
    final_params: ModelParams = field(repr=False, default=None)


def evaluate(params: ModelParams, graphs: Sequence[CellGraph], batch_size: int = 4096) -> float:
    """Mean MAPE of the model over labelled graphs."""
    preds, targets = [], []
    for start in range(0, len(graphs), batch_size):
        batch = collate(graphs[start:start + batch_size])
        preds.append(forward(params, batch))
        targets.append(batch.targets)
    return mape_loss(np.concatenate(preds), np.concatenate(targets))[0]


def train(
    train_set: Sequence[CellGraph],
    valid_set: Sequence[CellGraph],
    config: TrainConfig,
    params: Optional[ModelParams] = None,
    state: Optional[OptimizerState] = None,
    start_epoch: int = 1,
) -> TrainResult:
    """
    Minibatch Adam on MAPE with the halving learning-rate schedule.

    Each epoch shuffles with an RNG seeded from (seed, epoch), so a resumed
    run sees the same batch order as an uninterrupted one.

    Args:
        train_set: Normalized graphs with targets.
        valid_set: Normalized graphs with targets; may be empty.
        config: Training constants.
        params: Starting parameters (He init from config.seed when omitted).
        state: Optimizer state to resume from.
        start_epoch: First epoch number, > 1 when resuming.

    Returns:
        TrainResult holding the best-validation parameters.

    Raises:
        DivergenceError: If the training loss becomes non-finite.
    """
    if not train_set:
        raise DataError("training set is empty")
    if any(g.target is None for g in train_set) or any(g.target is None for g in valid_set):
        raise DataError("every training and validation graph needs a target")
    layout = train_set[0].layout
    params = params.copy() if params is not None else init(layout, config.seed, config.hidden)
    state = state or OptimizerState.zeros_like(params, config.lr0)

    best = params.copy()
    best_valid: Optional[float] = None
    rows = []
    last_epoch = start_epoch - 1
    end_epoch = start_epoch + config.epochs - 1
    for epoch in range(start_epoch, end_epoch + 1):
        state.lr = learning_rate(epoch, config)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = collate([train_set[i] for i in order[start:start + config.batch_size]])
            loss, grads = backward(params, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f"epoch {epoch}: training loss became non-finite")
            adam_step(params, grads, state, config)
            total += loss * batch.size
            seen += batch.size

        valid_mape = float("nan")
        if valid_set and (epoch % config.valid_interval == 0 or epoch == end_epoch):
            valid_mape = evaluate(params, valid_set)
            if not np.isfinite(valid_mape):
                raise DivergenceError(f"epoch {epoch}: validation loss became non-finite")
            if best_valid is None or valid_mape < best_valid:
                best_valid = valid_mape
                best = params.copy()
            logger.info("epoch %d lr %.3g train %.4f valid %.4f", epoch, state.lr, total / seen, valid_mape)
        rows.append({"epoch": epoch, "lr": state.lr, "train_mape": total / seen, "valid_mape": valid_mape})
        last_epoch = epoch

    if not valid_set:
        best = params.copy()
    log = pd.DataFrame(rows, columns=["epoch", "lr", "train_mape", "valid_mape"])
    return TrainResult(best, state, log, best_valid, last_epoch, final_params=params)


def write_training_log(log: pd.DataFrame, path: "str | Path") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log.to_csv(path, index=False)
    return path


def predict_batch(
    params: ModelParams,
    norm_spec: NormalizationSpec,
    graphs: Sequence[CellGraph],
    jobs: int = 1,
    chunk_size: int = 4096,
) -> np.ndarray:
    """
    Normalize raw graphs and run the model on them in chunks.

    Raises:
        ValueError: If a graph layout differs from the model's.
    """
    if not graphs:
        return np.zeros(0)
    for graph in graphs:
        if graph.layout is not params.layout:
            raise ValueError(f"graph layout {graph.layout.name} does not match model layout {params.layout.name}")
    chunks = [graphs[i:i + chunk_size] for i in range(0, len(graphs), chunk_size)]

    def run(chunk: Sequence[CellGraph]) -> np.ndarray:
        return forward(params, collate([norm_spec.apply_graph(g) for g in chunk]))

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]
    return np.concatenate(parts)


# --- Checkpoints -----------------------------------------------------------

MAGIC = b"CGNN"
VERSION = 1
_HEADER = struct.Struct("<4sHHIII")


@dataclass
class Checkpoint:
    params: ModelParams
    norm: Optional[NormalizationSpec] = None
    state: Optional[OptimizerState] = None
    epoch: int = 0


def _write_array(handle, array: np.ndarray) -> None:
    handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_array(handle, shape: Tuple[int, ...]) -> np.ndarray:
    size = int(np.prod(shape)) * 8
    data = handle.read(size)
    if len(data) != size:
        raise DatasetFormatError("truncated checkpoint")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def write_checkpoint(path: "str | Path", checkpoint: Checkpoint) -> Path:
    """
    Write parameters, the normalization spec and optional Adam state.

    Layout: magic, version, layout id, in_dim, hidden, epoch; the seven
    tensors as row-major float64; a flag plus min/max vectors; a flag plus
    step, lr and both moment sets.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = checkpoint.params
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, VERSION, params.layout.file_id, params.in_dim, params.hidden, checkpoint.epoch))
        for name in PARAM_NAMES:
            _write_array(handle, params[name])
        handle.write(struct.pack("<B", checkpoint.norm is not None))
        if checkpoint.norm is not None:
            _write_array(handle, checkpoint.norm.minimum)
            _write_array(handle, checkpoint.norm.maximum)
        handle.write(struct.pack("<B", checkpoint.state is not None))
        if checkpoint.state is not None:
            handle.write(struct.pack("<Qd", checkpoint.state.step, checkpoint.state.lr))
            for moments in (checkpoint.state.m, checkpoint.state.v):
                for name in PARAM_NAMES:
                    _write_array(handle, moments[name])
    return path


def read_checkpoint(path: "str | Path") -> Checkpoint:
    """
    Load a file written by write_checkpoint.

    Raises:
        DatasetFormatError: On a bad magic, version or truncated file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        header = handle.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DatasetFormatError(f"{path.name}: truncated checkpoint header")
        magic, version, layout_id, in_dim, hidden, epoch = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DatasetFormatError(f"{path.name}: not a checkpoint (magic {magic!r})")
        if version != VERSION:
            raise DatasetFormatError(f"{path.name}: unsupported checkpoint version {version}")
        layout = FeatureLayout.from_file_id(layout_id)
        shapes = _shapes(in_dim, hidden)
        params = ModelParams(layout, {name: _read_array(handle, shapes[name]) for name in PARAM_NAMES})
        norm = None
        if struct.unpack("<B", handle.read(1))[0]:
            norm = NormalizationSpec(layout, _read_array(handle, (in_dim,)), _read_array(handle, (in_dim,)))
        state = None
        if struct.unpack("<B", handle.read(1))[0]:
            step, lr = struct.unpack("<Qd", handle.read(16))
            m = {name: _read_array(handle, shapes[name]) for name in PARAM_NAMES}
            v = {name: _read_array(handle, shapes[name]) for name in PARAM_NAMES}
            state = OptimizerState(m, v, step, lr)
    return Checkpoint(params, norm, state, epoch)


def load_models(directory: "str | Path", tasks: Sequence[str]) -> Dict[str, Checkpoint]:
    """Read '<task>.cgnn' checkpoints from a directory."""
    directory = Path(directory)
    models = {}
    for task in tasks:
        models[task] = read_checkpoint(directory / f"{task}.cgnn")
    return models


def throughput(count: int, seconds: float) -> float:
    """Graphs per second, inf for an instantaneous run."""
    return float("inf") if seconds <= 0 else count / seconds


def split_validation(graphs: Sequence[CellGraph], fraction: float, seed: int) -> Tuple[List[CellGraph], List[CellGraph]]:
    """Seeded random (train, valid) split of a graph list."""
    if not 0 <= fraction < 1:
        raise ValueError(f"validation fraction must be in [0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(graphs))
    cut = int(round(len(graphs) * fraction))
    valid_idx = set(order[:cut].tolist())
    train_part = [g for i, g in enumerate(graphs) if i not in valid_idx]
    valid_part = [g for i, g in enumerate(graphs) if i in valid_idx]
    return train_part, valid_part
