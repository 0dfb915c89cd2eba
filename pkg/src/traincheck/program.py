"""The unit under debug: a network bound to its loss, optimizer, and data.

A ``TrainingProgram`` owns everything a training run needs.  Debug phases
never train the original object: they ``fork`` it, which copies parameters,
resets optimizer state, and derives fresh labeled random streams so every
phase is reproducible in isolation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .data import AugmenterSpec, BatchStream, Dataset, augment
from .nn import (
    INFER,
    TRAIN,
    LossSpec,
    LossValue,
    Network,
    OptimizerSpec,
    RegularizationSpec,
    apply_update,
    backward_pass,
    compute_loss,
    forward_pass,
)
from .tensor import RngStream, as_tensor


def accuracy(y, targets) -> float:
    yv = as_tensor(y)
    t = as_tensor(targets)
    return float((yv.argmax(axis=1) == t.argmax(axis=1)).mean())


def mean_absolute_error(y, targets) -> float:
    return float(np.abs(as_tensor(y) - as_tensor(targets)).mean())


@dataclass
class StepResult:
    """Everything one optimizer step produced."""

    iteration: int
    trace: object
    loss: LossValue
    grads: object
    deltas: dict


@dataclass
class TrainingProgram:
    """A feedforward training program: model, objective, update rule, data."""

    name: str
    network: Network
    loss: LossSpec
    optimizer: OptimizerSpec
    regularization: RegularizationSpec
    train_data: Dataset
    test_data: Dataset
    batch_size: int
    seed: int
    augmenter: AugmenterSpec | None = None
    stream_mode: str = "correct"
    batch_stream: BatchStream = field(init=False)
    aug_stream: RngStream = field(init=False)

    def __post_init__(self):
        self._wire_streams("root")

    def _wire_streams(self, label: str):
        base = RngStream(self.seed).split(label)
        self.batch_stream = BatchStream(
            dataset=self.train_data,
            batch_size=self.batch_size,
            stream=base.split("batches"),
            mode=self.stream_mode,
        )
        self.aug_stream = base.split("augment")
        for i, layer in enumerate(self.network.layers):
            if hasattr(layer, "pkeep"):
                layer.stream = base.split(f"dropout-{i}")

    @property
    def problem(self) -> str:
        return self.network.problem

    def fork(self, label: str) -> "TrainingProgram":
        """Independent copy for one debug phase.

        Parameters are copied as they stand; optimizer state is cleared and
        all random streams are re-derived from (seed, label), so a fork's
        behavior depends only on those two values.
        """
        twin = copy.deepcopy(self)
        twin.optimizer.reset()
        twin._wire_streams(label)
        return twin

    def metric(self, y, targets) -> float:
        if self.problem == "classification":
            return accuracy(y, targets)
        return mean_absolute_error(y, targets)

    @property
    def metric_name(self) -> str:
        return "accuracy" if self.problem == "classification" else "mae"


def train_step(program: TrainingProgram, x, y, iteration: int = 0) -> StepResult:
    """One forward/backward/update cycle in train mode."""
    trace = forward_pass(program.network, x, TRAIN)
    loss_value = compute_loss(trace, y, program.loss, program.regularization, program.network)
    grads = backward_pass(program.network, trace, y, program.loss, program.regularization)
    deltas = apply_update(program.optimizer, program.network, grads)
    return StepResult(iteration=iteration, trace=trace, loss=loss_value, grads=grads,
                      deltas=deltas)


def train_on_batch(program: TrainingProgram, x, y, iterations: int, callback=None):
    """Train on one fixed batch; ``callback(step)`` may return False to stop."""
    results = []
    for i in range(1, iterations + 1):
        step = train_step(program, x, y, iteration=i)
        results.append(step.loss.total)
        if callback is not None and callback(step) is False:
            break
    return results


def train_epochs(program: TrainingProgram, epochs: int, *, use_augmenter: bool = False,
                 first_iteration_hook=None):
    """Train over the bound batch stream for ``epochs`` passes.

    ``first_iteration_hook(epoch, loss_total, data_loss)`` fires on each
    epoch's first batch, before that batch's update has been applied to
    anything else.
    """
    for epoch in range(epochs):
        for i, (bx, by) in enumerate(program.batch_stream.epoch()):
            if use_augmenter and program.augmenter is not None:
                bx = augment(bx, program.augmenter, program.aug_stream)
            step = train_step(program, bx, by, iteration=i)
            if i == 0 and first_iteration_hook is not None:
                first_iteration_hook(epoch, step.loss.total, step.loss.data_loss)


def predict(program: TrainingProgram, x):
    return forward_pass(program.network, x, INFER, update_stats=False).y


def evaluate_metric(program: TrainingProgram, x, y) -> float:
    """Inference-mode metric on the given data."""
    return program.metric(predict(program, x), y)


def evaluate_loss(program: TrainingProgram, x, y, mode: str = INFER) -> LossValue:
    trace = forward_pass(program.network, x, mode, update_stats=False)
    return compute_loss(trace, y, program.loss, program.regularization, program.network)


def fit_reached(program: TrainingProgram, x, y, mae_target: float) -> bool:
    """Has the program memorized this batch (inference-mode check)?"""
    m = evaluate_metric(program, x, y)
    if program.problem == "classification":
        return m >= 1.0
    return m <= mae_target


def iterations_to_fit(program: TrainingProgram, x, y, cap: int, mae_target: float) -> int:
    """Iterations until the batch is memorized, or ``cap`` if never."""
    fork = program.fork("iterations-to-fit")
    for i in range(1, cap + 1):
        step = train_step(fork, x, y, iteration=i)
        if not np.isfinite(step.loss.total):
            return cap
        if i % 10 == 0 and fit_reached(fork, x, y, mae_target):
            return i
    return cap
