"""Adam optimisation, the epoch loop, k-fold cross-validation, and sweeps.

Batching averages per-graph gradients (graphs vary in size, so there is no
padded batching); accumulation runs in ascending graph-index order inside
each batch, which keeps results bit-deterministic. Every random choice
descends from the master seed through named seed sequences, so a (dataset,
seeds, configs) triple fully determines every reported number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldPlan, make_folds
from .errors import ContractError
from .model import ModelConfig, ModelParams, forward, layer_sizes_from_ratio, loss, predict
from .tensor import Tape


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    folds: int = 10
    repeats: int = 10

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "folds": self.folds,
            "repeats": self.repeats,
        }


class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.m = {n: np.zeros_like(t.data) for n, t in params.named().items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.named().items()}
        self.t = 0


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update over every parameter."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, tensor in params.named().items():
        if name not in grads:
            raise ContractError(f"missing gradient for parameter {name}")
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        tensor.data = tensor.data - config.lr * (m / bias1) / (np.sqrt(v / bias2) + config.eps)


def _seed_for(*entropy: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy)


def evaluate(dataset: Dataset, indices: list[int], params: ModelParams) -> tuple[float, float]:
    """Mean eval-mode loss and accuracy over the given graph indices."""
    if not indices:
        return 0.0, 0.0
    total, correct = 0.0, 0
    for i in indices:
        g = dataset.graphs[i]
        logits, _ = forward(g, params, training=False)
        total += loss(logits, g.label).item()
        correct += int(predict(logits) == g.label)
    return total / len(indices), correct / len(indices)


@dataclass
class FoldResult:
    repeat: int
    fold: int
    final_accuracy: float
    best_accuracy: float
    curve: list[dict] = field(repr=False, default_factory=list)
    updated_indices: list[int] = field(repr=False, default_factory=list)
    params: ModelParams | None = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "repeat": self.repeat,
            "fold": self.fold,
            "final_accuracy": self.final_accuracy,
            "best_accuracy": self.best_accuracy,
        }


def train_graphs(
    dataset: Dataset,
    train_idx: list[int],
    test_idx: list[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    repeat: int = 0,
    fold: int = 0,
) -> FoldResult:
    """Train on ``train_idx`` and evaluate on ``test_idx`` every epoch.

    The fold result is the final-epoch test accuracy; picking the best
    epoch against the test fold would leak, so the peak is only reported.
    """
    init_seed, shuffle_seed, drop_seed = (
        s.generate_state(1)[0]
        for s in _seed_for(train_config.seed, repeat, fold).spawn(3)
    )
    params = ModelParams(model_config, seed=int(init_seed))
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(drop_seed)

    curve: list[dict] = []
    touched: set[int] = set()
    best_acc, final_acc = 0.0, 0.0
    for epoch in range(1, train_config.epochs + 1):
        order = [train_idx[i] for i in shuffle_rng.permutation(len(train_idx))]
        epoch_losses: list[float] = []
        epoch_correct = 0
        for start in range(0, len(order), train_config.batch_size):
            batch = sorted(order[start : start + train_config.batch_size])
            params.zero_grad()
            for i in batch:
                g = dataset.graphs[i]
                with Tape() as tape:
                    logits, _ = forward(g, params, training=True, rng=dropout_rng)
                    objective = loss(logits, g.label)
                tape.backward(objective)
                epoch_losses.append(objective.item())
                epoch_correct += int(predict(logits) == g.label)
                touched.add(i)
            grads = {
                name: t.grad_or_zero() / len(batch) for name, t in params.named().items()
            }
            adam_step(params, grads, state, train_config)
        params.zero_grad()

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
        train_acc = epoch_correct / len(order) if order else 0.0
        test_loss, test_acc = evaluate(dataset, test_idx, params)
        curve.append(
            {"epoch": epoch, "split": "train", "loss": train_loss, "accuracy": train_acc}
        )
        curve.append(
            {"epoch": epoch, "split": "test", "loss": test_loss, "accuracy": test_acc}
        )
        best_acc = max(best_acc, test_acc)
        final_acc = test_acc
    return FoldResult(
        repeat=repeat,
        fold=fold,
        final_accuracy=final_acc,
        best_accuracy=best_acc,
        curve=curve,
        updated_indices=sorted(touched),
        params=params,
    )


def train_fold(
    dataset: Dataset,
    plan: FoldPlan,
    fold: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    repeat: int = 0,
) -> FoldResult:
    return train_graphs(
        dataset,
        plan.train_indices(fold),
        plan.test_indices(fold),
        model_config,
        train_config,
        repeat=repeat,
        fold=fold,
    )


@dataclass
class RunReport:
    dataset: str
    model_config: ModelConfig
    train_config: TrainConfig
    results: list[FoldResult]
    mean_accuracy: float
    std_error: float
    curve: list[dict]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "results": [r.to_dict() for r in self.results],
            "mean_accuracy": self.mean_accuracy,
            "std_error": self.std_error,
            "curve": self.curve,
        }


def mean_and_std_error(values: list[float]) -> tuple[float, float]:
    """Sample mean and standard error (sample std over sqrt(n))."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / np.sqrt(arr.size))


def _mean_curve(results: list[FoldResult]) -> list[dict]:
    """Per-epoch average of the fold curves, one train and one test row each."""
    if not results:
        return []
    epochs = max(row["epoch"] for row in results[0].curve)
    out: list[dict] = []
    for epoch in range(1, epochs + 1):
        for split in ("train", "test"):
            rows = [
                row
                for r in results
                for row in r.curve
                if row["epoch"] == epoch and row["split"] == split
            ]
            out.append(
                {
                    "epoch": epoch,
                    "split": split,
                    "loss": float(np.mean([row["loss"] for row in rows])),
                    "accuracy": float(np.mean([row["accuracy"] for row in rows])),
                }
            )
    return out


def cross_validate(
    dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig
) -> RunReport:
    """folds x repeats training runs; each repeat reshuffles the folds."""
    results: list[FoldResult] = []
    for repeat in range(train_config.repeats):
        fold_seed = int(_seed_for(train_config.seed, repeat).generate_state(1)[0])
        plan = make_folds(dataset, train_config.folds, seed=fold_seed)
        for fold in range(train_config.folds):
            result = train_fold(dataset, plan, fold, model_config, train_config, repeat)
            result.params = None  # keep reports light; checkpoints are separate
            results.append(result)
    mean, se = mean_and_std_error([r.final_accuracy for r in results])
    return RunReport(
        dataset=dataset.name,
        model_config=model_config,
        train_config=train_config,
        results=results,
        mean_accuracy=mean,
        std_error=se,
        curve=_mean_curve(results),
    )


METHOD_VARIANTS = {
    "sshpool": {"variant": "sshpool", "attention_enabled": True},
    "sshpool_non": {"variant": "sshpool", "attention_enabled": False},
    "diffpool": {"variant": "diffpool", "attention_enabled": False},
    "global_sum": {"variant": "global_sum", "attention_enabled": False},
    "global_mean": {"variant": "global_mean", "attention_enabled": False},
}


def _config_for(
    base: ModelConfig,
    method: str,
    layer_sizes: tuple[int, ...],
    ratio: float | None = None,
) -> ModelConfig:
    override = METHOD_VARIANTS[method]
    d = base.to_dict()
    d.update(override)
    d["layer_sizes"] = list(layer_sizes)
    d["depth"] = len(layer_sizes)
    if ratio is not None:
        d["assignment_ratio"] = ratio
    return ModelConfig.from_dict(d)


def sweep_depth(
    dataset: Dataset,
    depths: list[int],
    base_config: ModelConfig,
    train_config: TrainConfig,
    methods: tuple[str, ...] = ("sshpool", "sshpool_non", "diffpool"),
) -> list[dict]:
    """Accuracy-versus-depth comparison table across pooling methods."""
    rows = []
    for depth in depths:
        sizes = layer_sizes_from_ratio(
            base_config.layer_sizes[0], base_config.assignment_ratio, depth
        )
        for method in methods:
            config = _config_for(base_config, method, sizes)
            report = cross_validate(dataset, config, train_config)
            rows.append(
                {
                    "depth": depth,
                    "method": method,
                    "mean_accuracy": report.mean_accuracy,
                    "std_error": report.std_error,
                }
            )
    return rows


def sweep_ratio(
    dataset: Dataset,
    ratios: list[float],
    base_config: ModelConfig,
    train_config: TrainConfig,
    methods: tuple[str, ...] = ("sshpool", "sshpool_non", "diffpool"),
) -> list[dict]:
    """Accuracy-versus-assignment-ratio table; sizes follow the geometric rule."""
    rows = []
    for ratio in ratios:
        sizes = layer_sizes_from_ratio(base_config.layer_sizes[0], ratio, base_config.depth)
        for method in methods:
            config = _config_for(base_config, method, sizes, ratio=ratio)
            report = cross_validate(dataset, config, train_config)
            rows.append(
                {
                    "ratio": ratio,
                    "method": method,
                    "mean_accuracy": report.mean_accuracy,
                    "std_error": report.std_error,
                }
            )
    return rows
