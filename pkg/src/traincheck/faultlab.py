"""Synthetic-fault benchmark: base programs, a fault catalog, and scoring.

Three small feedforward training programs (a regressor and two blob
classifiers, one plain and one with the full batchnorm/dropout stack) act
as clean references.  Each catalog entry injects exactly one fault into a
fork of a base program, validates that the fault actually produces a
symptom (worse test metric or slower single-batch fitting), runs a full
debug session, and scores the fired checks against the expected ones.

Scoring follows an a+b convention: ``a`` counts expected checks that
fired, ``b`` counts benign extra checks (generic training-health checks,
plus per-row allowances), and anything else fired is a false positive.
A row counts as detected only when a > 0.  A few rows are known misses
and carry an empty expected set on purpose; the benchmark must reproduce
the miss, not paper over it.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data import AugmenterSpec, Dataset, fit_scaler, one_hot
from .debugger.context import (
    CORRUPTED_LABELS,
    CheckContext,
    DEAD_RELU,
    DEAD_W,
    DIV_B,
    DIV_GRAD,
    DIV_LOSS,
    DIV_W,
    HF_LOSS,
    INV_INP_DEP,
    INV_LOSS_DEP,
    INV_OUTS,
    INV_OUT_DEP,
    NEG_W,
    NR_LOSS,
    OUT_RANGE_ACT,
    OVER_REG_LOSS,
    PI_LOSS,
    PI_W,
    SAT_ACT,
    SD_LOSS,
    SHIFTED_AUGMENTED,
    UNBALANCED_LABELS,
    UNS_ACT_HS,
    UNS_ACT_LS,
    UNS_INPS,
    UNS_MODE_TR,
    UNS_OUTS,
    UNTRAINED_PARAMS,
    UN_FIT_BATCH,
    UN_SYM_W,
    VAN_GRAD,
    W_UP_FAST,
    W_UP_SLOW,
    ZERO_LOSS,
    run_tasks,
)
from .debugger.session import DebugSession, probe_batch
from .errors import InapplicableFaultError, InvalidParameterError
from .nn import (
    CLASSIFICATION,
    REGRESSION,
    ActivationLayer,
    BatchNormLayer,
    DenseLayer,
    DropoutLayer,
    LossSpec,
    Network,
    OptimizerSpec,
    RegularizationSpec,
    activation,
    init_parameters,
)
from .program import (
    TrainingProgram,
    evaluate_metric,
    iterations_to_fit,
    train_epochs,
)
from .tensor import RngStream, Tensor

REGR = "RegrFNN"
SHALLOW = "ShallowFNN"
DEEP = "DeepFNN"
BASE_PROGRAMS = (REGR, SHALLOW, DEEP)

CODING = "coding"
MISCONFIG = "misconfiguration"

# Checks that legitimately co-fire as downstream symptoms of many faults.
# Firing one of these next to the expected check is benign (counted in b),
# firing anything else is a false positive.
GENERIC_CHECKS = frozenset({
    PI_LOSS, UN_FIT_BATCH, SD_LOSS, HF_LOSS, DIV_LOSS, DIV_W, DIV_B,
    DIV_GRAD, VAN_GRAD, W_UP_SLOW, W_UP_FAST, DEAD_RELU, SAT_ACT, NEG_W,
    DEAD_W, OUT_RANGE_ACT, UNTRAINED_PARAMS, UNS_ACT_LS, UNS_ACT_HS,
})


# ---------------------------------------------------------------------------
# synthetic data


# Per-feature affine maps giving the raw data mixed, decidedly unscaled
# units; the cleaned variants standardize them away.
_RAW_SCALES = np.array([1.0, 50.0, 0.02, 300.0, 5.0, 0.5])
_RAW_OFFSETS = np.array([0.0, 100.0, 3.0, -50.0, 10.0, 0.2])

_BLOB_CLASSES = 10
_BLOB_FEATURES = 20
_BLOB_NOISE = 0.75
_TEST_PER_CLASS = 20
_SHALLOW_PER_CLASS = 40
_DEEP_PER_CLASS = 100
_UNBALANCED_ROWS = (200,) + (6,) * 9

_REGR_FEATURES = 6
_REGR_TRAIN = 200
_REGR_TEST = 200
_REGR_NOISE = 0.05
_REGR_COEF = np.array([1.5, -2.0, 1.0, 0.5, -1.0, 0.8])


def _rawify(latent: Tensor) -> Tensor:
    d = latent.shape[1]
    return latent * np.resize(_RAW_SCALES, d) + np.resize(_RAW_OFFSETS, d)


@dataclass(frozen=True)
class DataBundle:
    """Train/test splits in both cleaned and raw form."""

    train: Dataset
    test: Dataset
    raw_train_X: Tensor
    raw_test_X: Tensor
    raw_train_Y: Tensor | None = None
    raw_test_Y: Tensor | None = None


def blob_dataset(seed: int, train_rows: tuple, test_rows: tuple,
                 noise_std: float = _BLOB_NOISE) -> DataBundle:
    """Gaussian-blob classification data with per-feature raw units.

    ``train_rows``/``test_rows`` give the row count per class, so skewed
    class mixes are just a different tuple.
    """
    rng = RngStream(seed).split("blobs")
    centers = rng.split("centers").normal(0.0, 1.0, (_BLOB_CLASSES, _BLOB_FEATURES))

    def draw(rows, stream):
        xs, labels = [], []
        for k, count in enumerate(rows):
            pts = centers[k] + noise_std * stream.split(f"class-{k}").normal(
                0.0, 1.0, (count, _BLOB_FEATURES))
            xs.append(pts)
            labels.extend([k] * count)
        x = np.vstack(xs)
        y = np.array(labels, dtype=np.int64)
        order = stream.split("order").permutation(len(labels))
        return x[order], y[order]

    latent_tr, y_tr = draw(train_rows, rng.split("train"))
    latent_te, y_te = draw(test_rows, rng.split("test"))
    raw_tr, raw_te = _rawify(latent_tr), _rawify(latent_te)
    scaler = fit_scaler(raw_tr, "standardize")
    train = Dataset(X=scaler.apply(raw_tr), Y=one_hot(y_tr, _BLOB_CLASSES),
                    problem=CLASSIFICATION)
    test = Dataset(X=scaler.apply(raw_te), Y=one_hot(y_te, _BLOB_CLASSES),
                   problem=CLASSIFICATION)
    return DataBundle(train=train, test=test, raw_train_X=raw_tr, raw_test_X=raw_te)


def regression_dataset(seed: int, n_train: int = _REGR_TRAIN,
                       n_test: int = _REGR_TEST,
                       noise_std: float = _REGR_NOISE) -> DataBundle:
    """Noisy linear-factor regression data with raw targets around 25.

    Targets are min-max scaled onto [0, 1]: on that scale a small weight
    penalty measurably fights overfitting without blocking single-batch
    memorization.
    """
    rng = RngStream(seed).split("regr")
    w = _REGR_COEF / np.linalg.norm(_REGR_COEF)

    def draw(n, stream):
        latent = stream.split("x").normal(0.0, 1.0, (n, _REGR_FEATURES))
        signal = latent @ w + noise_std * stream.split("noise").normal(0.0, 1.0, n)
        return latent, 25.0 + 7.0 * signal.reshape(-1, 1)

    latent_tr, yraw_tr = draw(n_train, rng.split("train"))
    latent_te, yraw_te = draw(n_test, rng.split("test"))
    raw_tr, raw_te = _rawify(latent_tr), _rawify(latent_te)
    xscaler = fit_scaler(raw_tr, "standardize")
    yscaler = fit_scaler(yraw_tr, "minmax")
    train = Dataset(X=xscaler.apply(raw_tr), Y=yscaler.apply(yraw_tr),
                    problem=REGRESSION)
    test = Dataset(X=xscaler.apply(raw_te), Y=yscaler.apply(yraw_te),
                   problem=REGRESSION)
    return DataBundle(train=train, test=test, raw_train_X=raw_tr,
                      raw_test_X=raw_te, raw_train_Y=yraw_tr, raw_test_Y=yraw_te)


_BUNDLE_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def _bundle(base: str, seed: int, variant: str = "base") -> DataBundle:
    key = (base, seed, variant)
    with _CACHE_LOCK:
        if key not in _BUNDLE_CACHE:
            if base == REGR:
                made = regression_dataset(seed)
            elif variant == "unbalanced":
                made = blob_dataset(seed, _UNBALANCED_ROWS,
                                    (_TEST_PER_CLASS,) * _BLOB_CLASSES)
            else:
                per = _SHALLOW_PER_CLASS if base == SHALLOW else _DEEP_PER_CLASS
                made = blob_dataset(seed, (per,) * _BLOB_CLASSES,
                                    (_TEST_PER_CLASS,) * _BLOB_CLASSES)
            _BUNDLE_CACHE[key] = made
        return _BUNDLE_CACHE[key]


# ---------------------------------------------------------------------------
# base programs


def _dense(fan_in: int, fan_out: int) -> DenseLayer:
    return DenseLayer(W=np.zeros((fan_in, fan_out)), b=np.zeros(fan_out))


def _relu() -> ActivationLayer:
    return ActivationLayer(activation("relu"))


def base_program(base: str, seed: int = 0) -> TrainingProgram:
    """Build one of the clean reference programs, weights initialized."""
    if base not in BASE_PROGRAMS:
        raise InvalidParameterError(
            f"unknown base program {base!r}, expected one of {BASE_PROGRAMS}")
    bundle = _bundle(base, seed)
    if base == REGR:
        net = Network(
            layers=[_dense(_REGR_FEATURES, 64), _relu(),
                    _dense(64, 64), _relu(),
                    _dense(64, 1)],
            problem=REGRESSION)
        loss = LossSpec(kind="mse")
        # eps well above the adam default: near the optimum the update
        # turns linear in the gradient, so single-batch memorization is
        # not blocked by adam's stationary noise
        opt = OptimizerSpec(kind="adam", lr=0.01, eps=1e-3)
        reg = RegularizationSpec(lambda_l2=2e-4)
        batch = 32
    elif base == SHALLOW:
        net = Network(
            layers=[_dense(_BLOB_FEATURES, 64), _relu(),
                    _dense(64, 64), _relu(),
                    _dense(64, _BLOB_CLASSES), ActivationLayer(activation("softmax"))],
            problem=CLASSIFICATION)
        loss = LossSpec(kind="cross_entropy")
        opt = OptimizerSpec(kind="sgd", lr=0.1)
        reg = RegularizationSpec(lambda_l1=1e-5, lambda_l2=1e-3)
        batch = 64
    else:
        widths = (64, 64, 32, 32)
        pkeeps = (0.8, 0.7, 0.6, 0.5)
        layers: list = []
        fan_in = _BLOB_FEATURES
        scratch = RngStream(seed).split("placeholder")
        for width, pkeep in zip(widths, pkeeps):
            layers += [_dense(fan_in, width), BatchNormLayer.sized(width),
                       _relu(), DropoutLayer(pkeep=pkeep, stream=scratch)]
            fan_in = width
        layers += [_dense(fan_in, _BLOB_CLASSES),
                   ActivationLayer(activation("softmax"))]
        net = Network(layers=layers, problem=CLASSIFICATION)
        loss = LossSpec(kind="cross_entropy")
        opt = OptimizerSpec(kind="adam", lr=0.02, eps=0.1)
        reg = RegularizationSpec()
        batch = 64
    init_parameters(net, "auto", RngStream(seed).split("init"))
    return TrainingProgram(
        name=base, network=net, loss=loss, optimizer=opt, regularization=reg,
        train_data=bundle.train, test_data=bundle.test, batch_size=batch,
        seed=seed)


# ---------------------------------------------------------------------------
# fault injectors


def _swap_inputs(program: TrainingProgram, train_X: Tensor, test_X: Tensor):
    program.train_data = Dataset(X=np.array(train_X), Y=program.train_data.Y,
                                 problem=program.problem)
    program.test_data = Dataset(X=np.array(test_X), Y=program.test_data.Y,
                                problem=program.problem)


def _inject_raw_inputs(program, params):
    bundle = _bundle(program.name, program.seed)
    _swap_inputs(program, bundle.raw_train_X, bundle.raw_test_X)


def _inject_redundant_scaling(program, params):
    factor = params.get("factor", 1.0 / 255.0)
    _swap_inputs(program, program.train_data.X * factor,
                 program.test_data.X * factor)


def _inject_raw_targets(program, params):
    bundle = _bundle(program.name, program.seed)
    program.train_data = Dataset(X=program.train_data.X,
                                 Y=np.array(bundle.raw_train_Y),
                                 problem=program.problem)
    program.test_data = Dataset(X=program.test_data.X,
                                Y=np.array(bundle.raw_test_Y),
                                problem=program.problem)


def _inject_unbalanced(program, params):
    bundle = _bundle(program.name, program.seed, "unbalanced")
    program.train_data = bundle.train
    program.test_data = bundle.test


def _inject_flipped_sign(program, params):
    program.optimizer.gradient_sign = -1.0


def _inject_drop_softmax(program, params):
    layers = program.network.layers
    for i in range(len(layers) - 1, -1, -1):
        if isinstance(layers[i], ActivationLayer) and layers[i].kind.name == "softmax":
            del layers[i]
            return
    raise InapplicableFaultError("network has no softmax activation to remove")


def _inject_loss_side_softmax(program, params):
    program.loss.from_logits = True


def _inject_hidden_softmax(program, params):
    acts = [l for l in program.network.layers if isinstance(l, ActivationLayer)]
    for layer in acts[:-1]:
        layer.kind = activation("softmax")


def _inject_output_activation(program, params):
    program.network.layers.append(ActivationLayer(activation(params["kind"])))


def _inject_softmax_axis(program, params):
    for layer in program.network.layers:
        if isinstance(layer, ActivationLayer) and layer.kind.name == "softmax":
            layer.kind.axis = 0
            return
    raise InapplicableFaultError("network has no softmax activation")


def _inject_ce_axis(program, params):
    program.loss.class_axis = 0


def _inject_sum_reduction(program, params):
    program.loss.reduction = "sum"


def _inject_mse_broadcast(program, params):
    program.loss.mse_pairwise = True


def _inject_mse_loss(program, params):
    program.loss = LossSpec(kind="mse")


def _inject_ce_loss(program, params):
    program.loss = LossSpec(kind="cross_entropy")


def _inject_feature_shuffle(program, params):
    program.stream_mode = "features_only"


def _inject_noise_augmenter(program, params):
    program.augmenter = AugmenterSpec(kind="gaussian_noise",
                                      std=params.get("std", 5.0), ratio=1.0)


def _inject_constant_weights(program, params):
    init_parameters(program.network, "constant",
                    RngStream(program.seed).split("init"),
                    value=params.get("value", 0.5))


def _inject_dummy_weights(program, params):
    init_parameters(program.network, "dummy_normal",
                    RngStream(program.seed).split("init"),
                    std=params.get("std", 1.0))


def _inject_learning_rate(program, params):
    program.optimizer.lr = params["lr"]


def _inject_adam_epsilon(program, params):
    program.optimizer.eps = params.get("eps", 1e-16)


def _inject_drop_batchnorm(program, params):
    kept = [l for l in program.network.layers if not isinstance(l, BatchNormLayer)]
    if len(kept) == len(program.network.layers):
        raise InapplicableFaultError("network has no batchnorm layers to remove")
    program.network.layers = kept


def _inject_freeze_batchnorm(program, params):
    frozen = 0
    for layer in program.network.layers:
        if isinstance(layer, BatchNormLayer):
            layer.track_stats = False
            frozen += 1
    if frozen == 0:
        raise InapplicableFaultError("network has no batchnorm layers")


def _inject_lambda_scale(program, params):
    scale = params["scale"]
    reg = program.regularization
    program.regularization = RegularizationSpec(
        lambda_l1=reg.lambda_l1 * scale, lambda_l2=reg.lambda_l2 * scale,
        scale_by_batch=reg.scale_by_batch)


def _inject_pkeep(program, params):
    pkeep = params["pkeep"]
    touched = 0
    for layer in program.network.layers:
        if isinstance(layer, DropoutLayer):
            layer.pkeep = pkeep
            touched += 1
    if touched == 0:
        raise InapplicableFaultError("network has no dropout layers")


# ---------------------------------------------------------------------------
# the catalog


@dataclass(frozen=True)
class FaultSpec:
    """A concrete injection request: catalog id, target base, overrides."""

    fault: str
    program: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FaultCase:
    """Catalog entry: injector plus per-base scoring ground truth.

    ``expected`` maps base id to the designated primary check ids; an
    empty tuple marks a known miss that still counts a false negative.
    ``extra_ok`` lists non-generic checks tolerated alongside.  Unscored
    cases run and report but stay out of recall/precision.
    """

    fault: str
    category: str
    applicable: tuple
    inject: object
    expected: dict
    extra_ok: dict = field(default_factory=dict)
    scored: bool = True
    params: dict = field(default_factory=dict)


def _case(fault, category, applicable, inject, expected=None, extra_ok=None,
          scored=True, params=None) -> FaultCase:
    return FaultCase(fault=fault, category=category, applicable=tuple(applicable),
                     inject=inject, expected=expected or {},
                     extra_ok=extra_ok or {}, scored=scored, params=params or {})


CATALOG: dict = {c.fault: c for c in (
    _case("missing_input_normalization", CODING, (REGR, SHALLOW, DEEP),
          _inject_raw_inputs,
          expected={REGR: (UNS_INPS,), SHALLOW: (UNS_INPS,), DEEP: (UNS_INPS,)},
          extra_ok={DEEP: frozenset({NR_LOSS})}),
    _case("over_scaled_outputs", CODING, (REGR,),
          _inject_raw_targets, expected={REGR: (UNS_OUTS,)}),
    _case("redundant_normalization", CODING, (REGR, SHALLOW, DEEP),
          _inject_redundant_scaling,
          expected={REGR: (UNS_INPS,), SHALLOW: (UNS_INPS,), DEEP: (UNS_INPS,)},
          extra_ok={DEEP: frozenset({UNS_MODE_TR})}),
    _case("flipped_gradient_sign", CODING, (REGR, SHALLOW, DEEP),
          _inject_flipped_sign,
          expected={REGR: (DIV_LOSS,), SHALLOW: (DIV_LOSS,), DEEP: (DIV_LOSS,)},
          extra_ok={DEEP: frozenset({NR_LOSS})}),
    _case("missing_softmax", CODING, (SHALLOW, DEEP),
          _inject_drop_softmax,
          expected={SHALLOW: (INV_OUTS,), DEEP: (INV_OUTS,)},
          extra_ok={SHALLOW: frozenset({PI_W}), DEEP: frozenset({PI_W})}),
    _case("redundant_softmax", CODING, (SHALLOW, DEEP),
          _inject_loss_side_softmax,
          expected={SHALLOW: (), DEEP: ()},
          extra_ok={SHALLOW: frozenset({NR_LOSS}), DEEP: frozenset({NR_LOSS})}),
    _case("softmax_hidden_activation", CODING, (SHALLOW,),
          _inject_hidden_softmax, scored=False,
          extra_ok={SHALLOW: frozenset({PI_W})}),
    _case("softmax_one_dim_output", CODING, (REGR,),
          _inject_output_activation, scored=False,
          params={REGR: {"kind": "softmax"}},
          extra_ok={REGR: frozenset({INV_INP_DEP})}),
    _case("restricted_output_domain", CODING, (REGR,),
          _inject_output_activation, scored=False,
          params={REGR: {"kind": "sigmoid"}},
          extra_ok={REGR: frozenset({OVER_REG_LOSS})}),
    _case("softmax_wrong_axis", CODING, (SHALLOW, DEEP),
          _inject_softmax_axis,
          expected={SHALLOW: (INV_OUTS, INV_OUT_DEP),
                    DEEP: (INV_OUTS, INV_OUT_DEP)},
          extra_ok={SHALLOW: frozenset({INV_LOSS_DEP}),
                    DEEP: frozenset({INV_LOSS_DEP})}),
    _case("ce_wrong_axis", CODING, (SHALLOW, DEEP),
          _inject_ce_axis,
          expected={SHALLOW: (PI_LOSS, INV_LOSS_DEP),
                    DEEP: (PI_LOSS, INV_LOSS_DEP)}),
    _case("ce_sum_reduction", CODING, (SHALLOW, DEEP),
          _inject_sum_reduction,
          expected={SHALLOW: (PI_LOSS,), DEEP: (PI_LOSS,)}),
    _case("mse_wrong_broadcast", CODING, (REGR,),
          _inject_mse_broadcast, expected={REGR: ()}),
    _case("shuffle_features_only", CODING, (REGR, SHALLOW, DEEP),
          _inject_feature_shuffle,
          expected={REGR: (CORRUPTED_LABELS,), SHALLOW: (CORRUPTED_LABELS,),
                    DEEP: (CORRUPTED_LABELS,)}),
    _case("invalid_augmentation", CODING, (SHALLOW, DEEP),
          _inject_noise_augmenter,
          expected={SHALLOW: (SHIFTED_AUGMENTED,), DEEP: (SHIFTED_AUGMENTED,)},
          params={SHALLOW: {"std": 5.0}, DEEP: {"std": 5.0}}),
    _case("constant_weights", MISCONFIG, (REGR, SHALLOW, DEEP),
          _inject_constant_weights,
          expected={REGR: (UN_SYM_W,), SHALLOW: (UN_SYM_W,), DEEP: (UN_SYM_W,)},
          extra_ok={SHALLOW: frozenset({OVER_REG_LOSS})}),
    _case("dummy_random_weights", MISCONFIG, (REGR, SHALLOW, DEEP),
          _inject_dummy_weights,
          expected={REGR: (PI_W,), SHALLOW: (PI_W,), DEEP: (PI_W,)},
          extra_ok={DEEP: frozenset({NR_LOSS, UNS_MODE_TR})}),
    _case("mse_instead_of_ce", MISCONFIG, (SHALLOW, DEEP),
          _inject_mse_loss, expected={SHALLOW: (), DEEP: ()},
          extra_ok={DEEP: frozenset({UNS_MODE_TR})}),
    _case("ce_instead_of_mse", MISCONFIG, (REGR,),
          _inject_ce_loss, expected={REGR: ()}),
    _case("low_learning_rate", MISCONFIG, (REGR, SHALLOW, DEEP),
          _inject_learning_rate,
          expected={REGR: (W_UP_SLOW,), SHALLOW: (W_UP_SLOW,), DEEP: (W_UP_SLOW,)},
          extra_ok={DEEP: frozenset({UNS_MODE_TR})},
          params={REGR: {"lr": 1e-5}, SHALLOW: {"lr": 1e-4}, DEEP: {"lr": 2e-5}}),
    _case("high_learning_rate", MISCONFIG, (REGR, SHALLOW, DEEP),
          _inject_learning_rate,
          expected={REGR: (W_UP_FAST,), SHALLOW: (), DEEP: (W_UP_FAST,)},
          extra_ok={DEEP: frozenset({UNS_MODE_TR})},
          params={REGR: {"lr": 0.5}, SHALLOW: {"lr": 5.0}, DEEP: {"lr": 1.0}}),
    _case("small_adam_epsilon", MISCONFIG, (DEEP,),
          _inject_adam_epsilon, expected={DEEP: (W_UP_FAST,)},
          params={DEEP: {"eps": 1e-16}}),
    _case("missing_batchnorm", MISCONFIG, (DEEP,),
          _inject_drop_batchnorm, expected={DEEP: (UNS_ACT_LS,)},
          extra_ok={DEEP: frozenset({PI_W, NR_LOSS})}),
    _case("frozen_batchnorm_stats", MISCONFIG, (DEEP,),
          _inject_freeze_batchnorm, expected={DEEP: (UNS_MODE_TR,)},
          extra_ok={DEEP: frozenset({NR_LOSS})}),
    _case("low_lambda", MISCONFIG, (REGR, SHALLOW),
          _inject_lambda_scale,
          expected={REGR: (ZERO_LOSS,), SHALLOW: (ZERO_LOSS,)},
          params={REGR: {"scale": 0.0}, SHALLOW: {"scale": 0.0}}),
    _case("high_lambda", MISCONFIG, (REGR, SHALLOW),
          _inject_lambda_scale,
          expected={REGR: (OVER_REG_LOSS,), SHALLOW: (OVER_REG_LOSS,)},
          params={REGR: {"scale": 100.0}, SHALLOW: {"scale": 200.0}}),
    _case("high_pkeep", MISCONFIG, (DEEP,),
          _inject_pkeep, expected={DEEP: (ZERO_LOSS,)},
          params={DEEP: {"pkeep": 1.0}}),
    _case("low_pkeep", MISCONFIG, (DEEP,),
          _inject_pkeep, expected={DEEP: (UNS_MODE_TR,)},
          extra_ok={DEEP: frozenset({NR_LOSS})},
          params={DEEP: {"pkeep": 0.15}}),
    _case("unbalanced_dataset", MISCONFIG, (SHALLOW, DEEP),
          _inject_unbalanced,
          expected={SHALLOW: (UNBALANCED_LABELS,), DEEP: (UNBALANCED_LABELS,)},
          extra_ok={DEEP: frozenset({UNS_MODE_TR})}),
)}


def inject_fault(program: TrainingProgram, spec: FaultSpec) -> TrainingProgram:
    """Fork the program and apply exactly one catalog fault to the fork."""
    if spec.fault not in CATALOG:
        raise InvalidParameterError(f"unknown fault {spec.fault!r}")
    case = CATALOG[spec.fault]
    if program.name not in case.applicable:
        raise InapplicableFaultError(
            f"fault {spec.fault!r} does not apply to {program.name}"
            f" (applicable: {', '.join(case.applicable)})")
    faulty = program.fork(f"fault-{spec.fault}")
    params = dict(case.params.get(program.name, {}))
    params.update(spec.params)
    case.inject(faulty, params)
    # data, stream-mode, and layer-stack mutations all invalidate streams
    faulty._wire_streams(f"fault-{spec.fault}")
    return faulty


def applicable_pairs(selector: str | None = None) -> list:
    """All (fault, base) pairs, optionally filtered.

    The selector matches a category, a fault id, or a base program id.
    """
    pairs = []
    for case in CATALOG.values():
        for base in case.applicable:
            if selector and selector not in (case.category, case.fault, base):
                continue
            pairs.append(FaultSpec(fault=case.fault, program=base))
    return pairs


# ---------------------------------------------------------------------------
# symptom gate


_GATE_EPOCHS = {REGR: 60, SHALLOW: 20, DEEP: 15}
_GATE_FIT_CAP = 600
_GATE_ACC_DROP = 0.01
_GATE_MAE_RATIO = 1.1
_GATE_ITER_RATIO = 2.0


@dataclass(frozen=True)
class GateResult:
    """Outcome of the symptom validation for one injected program."""

    passed: bool
    reason: str
    base_metric: float
    fault_metric: float
    base_iterations: int
    fault_iterations: int

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "reason": self.reason,
            "base_metric": self.base_metric, "fault_metric": self.fault_metric,
            "base_iterations": self.base_iterations,
            "fault_iterations": self.fault_iterations,
        }


_REFERENCE_CACHE: dict = {}


def _gate_stats(program: TrainingProgram, ctx: CheckContext):
    """Test metric after a short training run, plus iterations to fit."""
    run = program.fork("gate-train")
    train_epochs(run, _GATE_EPOCHS[program.name],
                 use_augmenter=run.augmenter is not None)
    metric = evaluate_metric(run, run.test_data.X, run.test_data.Y)
    if not np.isfinite(metric):
        metric = 0.0 if program.problem == CLASSIFICATION else np.inf
    x, y = probe_batch(program, ctx)
    iters = iterations_to_fit(program, x, y, cap=_GATE_FIT_CAP,
                              mae_target=ctx.overfit_mae)
    return float(metric), int(iters)


def reference_stats(program: TrainingProgram, ctx: CheckContext):
    """Gate statistics of a clean base, cached per (base, seed)."""
    key = (program.name, program.seed)
    with _CACHE_LOCK:
        cached = _REFERENCE_CACHE.get(key)
    if cached is None:
        cached = _gate_stats(program, ctx)
        with _CACHE_LOCK:
            _REFERENCE_CACHE[key] = cached
    return cached


def symptom_gate(base: TrainingProgram, faulty: TrainingProgram,
                 ctx: CheckContext) -> GateResult:
    """Confirm the injected fault produced a measurable symptom."""
    base_metric, base_iters = reference_stats(base, ctx)
    fault_metric, fault_iters = _gate_stats(faulty, ctx)
    reasons = []
    if base.problem == CLASSIFICATION:
        if fault_metric <= base_metric - _GATE_ACC_DROP:
            reasons.append(
                f"accuracy dropped {base_metric:.3f} -> {fault_metric:.3f}")
    elif fault_metric >= base_metric * _GATE_MAE_RATIO:
        reasons.append(f"mae rose {base_metric:.4g} -> {fault_metric:.4g}")
    if base_iters < _GATE_FIT_CAP and fault_iters >= _GATE_ITER_RATIO * base_iters:
        reasons.append(
            f"fitting takes {fault_iters} iterations vs {base_iters}")
    return GateResult(
        passed=bool(reasons),
        reason="; ".join(reasons) if reasons else "no measurable symptom",
        base_metric=base_metric, fault_metric=fault_metric,
        base_iterations=base_iters, fault_iterations=fault_iters)


# ---------------------------------------------------------------------------
# detection matrix


@dataclass
class MatrixRow:
    """One benchmark pair: what fired, what was expected, how it scored."""

    fault: str
    program: str
    category: str
    scored: bool
    gate: GateResult
    expected: tuple
    fired: tuple
    a: int
    b: int
    fp: int
    fn: int
    seconds: float

    @property
    def detected(self) -> bool:
        return self.a > 0

    @property
    def counted(self) -> bool:
        """Rows that enter the aggregate scores."""
        return self.scored and self.gate.passed

    def to_dict(self) -> dict:
        return {
            "fault": self.fault, "program": self.program,
            "category": self.category, "scored": self.scored,
            "gate": self.gate.to_dict(), "expected": list(self.expected),
            "fired": list(self.fired), "tp_primary": self.a,
            "tp_secondary": self.b, "fp": self.fp, "fn": self.fn,
            "seconds": round(self.seconds, 3),
        }


def score_pair(case: FaultCase, base: str, fired) -> tuple:
    """Apply the a+b scoring convention to one row's fired set."""
    fired = set(fired)
    expected = set(case.expected.get(base, ()))
    allowed = GENERIC_CHECKS | case.extra_ok.get(base, frozenset())
    a = len(expected & fired)
    b = len((fired - expected) & allowed)
    fp = len(fired - expected - allowed)
    fn = 1 if case.scored and a == 0 else 0
    return a, b, fp, fn


@dataclass
class DetectionMatrix:
    """All benchmark rows plus aggregate precision/recall."""

    rows: list
    seed: int
    seconds: float = 0.0
    schema_version: int = 1

    def _counted(self, category: str | None = None):
        return [r for r in self.rows if r.counted and
                (category is None or r.category == category)]

    def designated(self, category: str | None = None):
        """Scored, gate-passed rows with a non-empty expected set."""
        return [r for r in self._counted(category) if r.expected]

    def recall(self, category: str | None = None) -> float:
        rows = self.designated(category)
        if not rows:
            return float("nan")
        return sum(1 for r in rows if r.detected) / len(rows)

    def precision(self, category: str | None = None) -> float:
        rows = self._counted(category)
        tp = sum(r.a + r.b for r in rows)
        fp = sum(r.fp for r in rows)
        if tp + fp == 0:
            return float("nan")
        return tp / (tp + fp)

    def false_negatives(self):
        return [r for r in self._counted() if r.fn]

    def summary(self) -> dict:
        out = {
            "pairs": len(self.rows),
            "scored": sum(1 for r in self.rows if r.scored),
            "gate_failures": sum(1 for r in self.rows if not r.gate.passed),
            "designated": len(self.designated()),
            "detected": sum(1 for r in self.designated() if r.detected),
            "recall": self.recall(),
            "precision": self.precision(),
            "false_negatives": len(self.false_negatives()),
            "seconds": round(self.seconds, 3),
        }
        for cat in (CODING, MISCONFIG):
            out[f"recall_{cat}"] = self.recall(cat)
            out[f"precision_{cat}"] = self.precision(cat)
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "summary": self.summary(),
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False,
                          default=_json_safe)

    def text_table(self) -> str:
        headers = ("fault", "program", "gate", "expected", "fired",
                   "TP", "FP", "FN")
        body = []
        for r in self.rows:
            mark = "" if r.scored else " (unscored)"
            body.append((
                r.fault, r.program,
                "pass" if r.gate.passed else "FAIL",
                ", ".join(r.expected) or "-",
                (", ".join(r.fired) or "-") + mark,
                f"{r.a}+{r.b}", str(r.fp), str(r.fn)))
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
                  for i, h in enumerate(headers)]
        lines = [" | ".join(h.ljust(w) for h, w in zip(headers, widths)),
                 "-+-".join("-" * w for w in widths)]
        lines += [" | ".join(c.ljust(w) for c, w in zip(row, widths))
                  for row in body]
        s = self.summary()
        lines.append("")
        lines.append(
            f"designated {s['designated']}, detected {s['detected']}, "
            f"recall {s['recall']:.3f}, precision {s['precision']:.3f}, "
            f"false negatives {s['false_negatives']}, "
            f"gate failures {s['gate_failures']}")
        for cat in (CODING, MISCONFIG):
            lines.append(
                f"  {cat}: recall {s[f'recall_{cat}']:.3f}, "
                f"precision {s[f'precision_{cat}']:.3f}")
        return "\n".join(lines)


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    raise TypeError(f"not JSON serializable: {value!r}")


def run_pair(spec: FaultSpec, ctx: CheckContext,
             base: TrainingProgram | None = None) -> MatrixRow:
    """Inject one fault, gate it, run a full session, and score the row."""
    started = time.perf_counter()
    case = CATALOG[spec.fault]
    if base is None:
        base = base_program(spec.program, ctx.seed)
    faulty = inject_fault(base, spec)
    gate = symptom_gate(base, faulty, ctx)
    report = DebugSession(faulty, ctx).run()
    fired = tuple(sorted({f.check for f in report.findings}))
    a, b, fp, fn = score_pair(case, spec.program, fired)
    return MatrixRow(
        fault=spec.fault, program=spec.program, category=case.category,
        scored=case.scored, gate=gate,
        expected=tuple(case.expected.get(spec.program, ())), fired=fired,
        a=a, b=b, fp=fp, fn=fn, seconds=time.perf_counter() - started)


def run_benchmark(ctx: CheckContext | None = None, pairs=None,
                  progress=None) -> DetectionMatrix:
    """Score every requested (fault, program) pair with a full session."""
    ctx = ctx or CheckContext()
    specs = list(pairs) if pairs is not None else applicable_pairs()
    started = time.perf_counter()
    bases = {}
    for spec in specs:
        if spec.program not in bases:
            bases[spec.program] = base_program(spec.program, ctx.seed)
    # warm the clean references sequentially so pair workers only read
    for name in bases:
        reference_stats(bases[name], ctx)

    def task(spec):
        def run():
            row = run_pair(spec, ctx, base=bases[spec.program])
            if progress is not None:
                progress(row)
            return row
        return run

    rows = run_tasks([task(s) for s in specs], ctx.parallel)
    return DetectionMatrix(rows=rows, seed=ctx.seed,
                           seconds=time.perf_counter() - started)
