"""Feedforward network engine: layers, losses, optimizers, and gradients.

The engine is deliberately explicit: forward passes record per-layer caches,
backward passes consume them with hand-written derivatives, and a separate
centered-difference routine provides an independent gradient route so the
two can be checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BatchSizeError,
    InvalidParameterError,
    ShapeMismatchError,
)
from .tensor import RngStream, Tensor, as_tensor

TRAIN = "train"
INFER = "infer"

# ---------------------------------------------------------------------------
# activations


@dataclass
class ActivationKind:
    """An elementwise (or row-wise, for softmax) activation function."""

    name: str
    slope: float = 0.01  # leaky_relu only
    axis: int = 1  # softmax only

    @property
    def bounds(self) -> tuple[float, float]:
        return {
            "identity": (-np.inf, np.inf),
            "relu": (0.0, np.inf),
            "leaky_relu": (-np.inf, np.inf),
            "sigmoid": (0.0, 1.0),
            "tanh": (-1.0, 1.0),
            "softmax": (0.0, 1.0),
        }[self.name]

    @property
    def bounded(self) -> bool:
        low, high = self.bounds
        return bool(np.isfinite(low) and np.isfinite(high))

    def apply(self, z: Tensor) -> Tensor:
        if self.name == "identity":
            return z
        if self.name == "relu":
            return np.maximum(z, 0.0)
        if self.name == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if self.name == "sigmoid":
            with np.errstate(over="ignore"):
                return 1.0 / (1.0 + np.exp(-z))
        if self.name == "tanh":
            return np.tanh(z)
        if self.name == "softmax":
            shifted = z - z.max(axis=self.axis, keepdims=True)
            e = np.exp(shifted)
            return e / e.sum(axis=self.axis, keepdims=True)
        raise InvalidParameterError(f"unknown activation {self.name!r}")

    def backward(self, grad_out: Tensor, z: Tensor, a: Tensor) -> Tensor:
        """Map dLoss/da to dLoss/dz using the cached forward values."""
        if self.name == "identity":
            return grad_out
        if self.name == "relu":
            return grad_out * (z > 0)
        if self.name == "leaky_relu":
            return grad_out * np.where(z > 0, 1.0, self.slope)
        if self.name == "sigmoid":
            return grad_out * a * (1.0 - a)
        if self.name == "tanh":
            return grad_out * (1.0 - a * a)
        if self.name == "softmax":
            inner = (grad_out * a).sum(axis=self.axis, keepdims=True)
            return a * (grad_out - inner)
        raise InvalidParameterError(f"unknown activation {self.name!r}")


def activation(name: str, **kw) -> ActivationKind:
    valid = ("identity", "relu", "leaky_relu", "sigmoid", "tanh", "softmax")
    if name not in valid:
        raise InvalidParameterError(f"unknown activation {name!r}, expected one of {valid}")
    return ActivationKind(name=name, **kw)


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseLayer:
    """Affine map: out = x @ W + b.  ``b`` may be None (missing bias)."""

    W: Tensor
    b: Tensor | None

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]


@dataclass
class ActivationLayer:
    kind: ActivationKind


@dataclass
class DropoutLayer:
    """Binary-mask dropout without inverse scaling.

    Train mode multiplies by a fresh Bernoulli(pkeep) mask drawn from the
    layer's stream; inference drops nothing and scales outputs by pkeep to
    compensate.
    """

    pkeep: float
    stream: RngStream

    def __post_init__(self):
        if not 0.0 < self.pkeep <= 1.0:
            raise InvalidParameterError(f"pkeep must lie in (0, 1], got {self.pkeep}")


@dataclass
class BatchNormLayer:
    """Per-feature standardization with learned scale and shift.

    Train mode normalizes with batch statistics and refreshes the moving
    estimates by exponential average; inference normalizes with the moving
    estimates.
    """

    alpha: Tensor
    beta: Tensor
    moving_mean: Tensor
    moving_var: Tensor
    momentum: float = 0.99
    eps: float = 1e-5
    track_stats: bool = True

    @classmethod
    def sized(cls, width: int, momentum: float = 0.99, eps: float = 1e-5) -> "BatchNormLayer":
        return cls(
            alpha=np.ones(width, dtype=np.float64),
            beta=np.zeros(width, dtype=np.float64),
            moving_mean=np.zeros(width, dtype=np.float64),
            moving_var=np.ones(width, dtype=np.float64),
            momentum=momentum,
            eps=eps,
        )


Layer = DenseLayer | ActivationLayer | DropoutLayer | BatchNormLayer

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass
class Network:
    """An ordered stack of layers plus the problem kind it solves."""

    layers: list
    problem: str

    def __post_init__(self):
        if self.problem not in (CLASSIFICATION, REGRESSION):
            raise InvalidParameterError(f"unknown problem kind {self.problem!r}")
        width = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DenseLayer):
                if width is not None and layer.fan_in != width:
                    raise ShapeMismatchError(
                        f"layer {i} expects width {layer.fan_in}, got {width}"
                    )
                width = layer.fan_out

    @property
    def n_outputs(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, DenseLayer):
                return layer.fan_out
        raise InvalidParameterError("network has no dense layers")

    @property
    def n_inputs(self) -> int:
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                return layer.fan_in
        raise InvalidParameterError("network has no dense layers")

    def dense_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, DenseLayer)]

    def activation_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ActivationLayer)]

    def output_activation(self) -> ActivationKind | None:
        last = self.layers[-1]
        if isinstance(last, ActivationLayer):
            return last.kind
        return None

    def has_softmax_output(self) -> bool:
        act = self.output_activation()
        return act is not None and act.name == "softmax"

    def hidden_activation_layers(self):
        """Activation layers except a terminal output activation."""
        acts = self.activation_layers()
        if acts and acts[-1][0] == len(self.layers) - 1:
            return acts[:-1]
        return acts

    def bn_follows(self, layer_idx: int) -> bool:
        nxt = layer_idx + 1
        return nxt < len(self.layers) and isinstance(self.layers[nxt], BatchNormLayer)

    def following_activation(self, layer_idx: int) -> ActivationKind | None:
        """First activation after ``layer_idx``, skipping BN and dropout."""
        for layer in self.layers[layer_idx + 1:]:
            if isinstance(layer, ActivationLayer):
                return layer.kind
            if isinstance(layer, DenseLayer):
                return None
        return None


def layer_labels(net: Network) -> dict:
    """Stable human-readable name per layer index (dense1, act1, bn1, ...)."""
    labels = {}
    counters = {"dense": 0, "act": 0, "bn": 0, "drop": 0}
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, DenseLayer):
            kind = "dense"
        elif isinstance(layer, ActivationLayer):
            kind = "act"
        elif isinstance(layer, BatchNormLayer):
            kind = "bn"
        else:
            kind = "drop"
        counters[kind] += 1
        labels[idx] = f"{kind}{counters[kind]}"
    return labels


# ---------------------------------------------------------------------------
# forward


@dataclass
class ForwardTrace:
    """Per-layer caches from one forward pass, consumed by backward."""

    x: Tensor
    mode: str
    caches: list
    y: Tensor


def forward_pass(net: Network, x, mode: str = TRAIN, update_stats: bool = True) -> ForwardTrace:
    """Run the network on a batch of rows.

    Train mode applies dropout masks and batch statistics; inference mode
    drops nothing, scales dropped layers by pkeep, and normalizes with the
    moving statistics.  ``update_stats=False`` freezes BN moving estimates
    for side-effect-free probing.
    """
    if mode not in (TRAIN, INFER):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    a = as_tensor(x)
    if a.ndim != 2:
        raise ShapeMismatchError(f"forward expects a (rows, features) batch, got {a.shape}")
    caches = []
    for layer in net.layers:
        if isinstance(layer, DenseLayer):
            if a.shape[1] != layer.fan_in:
                raise ShapeMismatchError(
                    f"dense layer expects {layer.fan_in} features, got {a.shape[1]}"
                )
            cache = {"x": a}
            a = a @ layer.W
            if layer.b is not None:
                a = a + layer.b
        elif isinstance(layer, ActivationLayer):
            z = a
            a = layer.kind.apply(z)
            cache = {"z": z, "a": a}
        elif isinstance(layer, DropoutLayer):
            if mode == TRAIN and layer.pkeep < 1.0:
                mask = layer.stream.bernoulli(layer.pkeep, a.shape)
                a = a * mask
                cache = {"mask": mask}
            elif mode == TRAIN:
                cache = {"mask": None}
            else:
                a = a * layer.pkeep
                cache = {"scale": layer.pkeep}
        elif isinstance(layer, BatchNormLayer):
            if mode == TRAIN:
                m = a.shape[0]
                if m < 2:
                    raise BatchSizeError(
                        "batch norm in train mode needs batch size >= 2, got 1"
                    )
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + layer.eps)
                xc = a - mu
                xhat = xc * inv_std
                if update_stats and layer.track_stats:
                    mom = layer.momentum
                    layer.moving_mean = mom * layer.moving_mean + (1 - mom) * mu
                    layer.moving_var = mom * layer.moving_var + (1 - mom) * var
                a = layer.alpha * xhat + layer.beta
                cache = {"xhat": xhat, "inv_std": inv_std, "m": m}
            else:
                inv_std = 1.0 / np.sqrt(layer.moving_var + layer.eps)
                a = layer.alpha * (a - layer.moving_mean) * inv_std + layer.beta
                cache = {"inv_std_run": inv_std}
        else:
            raise InvalidParameterError(f"unknown layer type {type(layer).__name__}")
        caches.append(cache)
    return ForwardTrace(x=as_tensor(x), mode=mode, caches=caches, y=a)


# ---------------------------------------------------------------------------
# losses


@dataclass
class LossSpec:
    """Loss configuration.

    ``class_axis`` selects the axis the cross-entropy sum runs over (1 is
    the class axis of a row batch; 0 reduces over the batch instead).
    ``mse_pairwise`` broadcasts residuals across the whole batch, pairing
    every prediction with every target, instead of row-by-row.
    """

    kind: str
    reduction: str = "mean"
    from_logits: bool = False
    epsilon: float = 1e-12
    class_axis: int = 1
    mse_pairwise: bool = False

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "mse"):
            raise InvalidParameterError(f"unknown loss kind {self.kind!r}")
        if self.reduction not in ("mean", "sum"):
            raise InvalidParameterError(f"unknown reduction {self.reduction!r}")
        if self.class_axis not in (0, 1):
            raise InvalidParameterError(f"class_axis must be 0 or 1, got {self.class_axis}")


@dataclass
class RegularizationSpec:
    """Weight-penalty configuration: lambda2 * 0.5 * ||W||_2^2 + lambda1 * ||W||_1."""

    lambda_l1: float = 0.0
    lambda_l2: float = 0.0
    scale_by_batch: bool = False

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_l2 < 0:
            raise InvalidParameterError("regularization strengths must be >= 0")


def per_instance_losses(y, targets, loss: LossSpec) -> np.ndarray:
    """Vector of unreduced losses; its index runs along the non-reduced axis."""
    yv = as_tensor(y)
    t = as_tensor(targets)
    if loss.kind == "mse":
        if loss.mse_pairwise:
            diff = yv[:, None, :] - t[None, :, :]
            return (diff**2).mean(axis=(1, 2))
        if yv.shape != t.shape:
            raise ShapeMismatchError(f"mse shapes differ: {yv.shape} vs {t.shape}")
        return ((yv - t) ** 2).mean(axis=1)
    if yv.shape != t.shape:
        raise ShapeMismatchError(f"cross entropy shapes differ: {yv.shape} vs {t.shape}")
    ax = loss.class_axis
    if loss.from_logits:
        shifted = yv - yv.max(axis=ax, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
        return -(t * log_probs).sum(axis=ax)
    # log of a negative "probability" is a diagnosis for the checks, not a
    # warning to print
    with np.errstate(invalid="ignore", divide="ignore"):
        return -(t * np.log(yv + loss.epsilon)).sum(axis=ax)


@dataclass(frozen=True)
class LossValue:
    data_loss: float
    penalty: float

    @property
    def total(self) -> float:
        return self.data_loss + self.penalty


def weight_penalty(net: Network, reg: RegularizationSpec, batch_rows: int = 1) -> float:
    """Penalty over dense weights only; biases and BN parameters are exempt."""
    value = 0.0
    for _, layer in net.dense_layers():
        if reg.lambda_l2:
            value += reg.lambda_l2 * 0.5 * float((layer.W**2).sum())
        if reg.lambda_l1:
            value += reg.lambda_l1 * float(np.abs(layer.W).sum())
    if reg.scale_by_batch:
        value /= float(batch_rows)
    return value


def compute_loss(trace: ForwardTrace, targets, loss: LossSpec, reg: RegularizationSpec,
                 net: Network) -> LossValue:
    """Reduce per-instance losses and add the weight penalty."""
    per = per_instance_losses(trace.y, targets, loss)
    data = float(per.mean()) if loss.reduction == "mean" else float(per.sum())
    penalty = weight_penalty(net, reg, batch_rows=trace.y.shape[0])
    return LossValue(data_loss=data, penalty=penalty)


def loss_output_gradient(y, targets, loss: LossSpec) -> Tensor:
    """dLoss/dy for the reduced data loss (penalty excluded)."""
    yv = as_tensor(y)
    t = as_tensor(targets)
    per_len = per_instance_losses(yv, t, loss).size
    scale = 1.0 / per_len if loss.reduction == "mean" else 1.0
    if loss.kind == "mse":
        if loss.mse_pairwise:
            m = t.shape[0]
            grad = 2.0 * (yv - t.mean(axis=0, keepdims=True)) / (yv.shape[1])
            return grad * scale
        return scale * 2.0 * (yv - t) / yv.shape[1]
    ax = loss.class_axis
    if loss.from_logits:
        shifted = yv - yv.max(axis=ax, keepdims=True)
        e = np.exp(shifted)
        soft = e / e.sum(axis=ax, keepdims=True)
        t_mass = t.sum(axis=ax, keepdims=True)
        return scale * (soft * t_mass - t)
    return scale * (-t / (yv + loss.epsilon))


# ---------------------------------------------------------------------------
# backward


@dataclass
class GradientSet:
    """Gradients from one backward pass.

    ``data`` maps layer index to parameter gradients of the data loss;
    ``penalty`` maps dense layer index to the weight-penalty gradient,
    kept separate so checks can compare the two routes.  ``d_input`` is
    the gradient with respect to the input batch.
    """

    data: dict
    penalty: dict
    d_input: Tensor

    def combined(self, layer_idx: int, name: str) -> Tensor:
        g = self.data[layer_idx][name]
        if name == "W" and layer_idx in self.penalty:
            return g + self.penalty[layer_idx]["W"]
        return g


def backprop_from_output(net: Network, trace: ForwardTrace, grad_y) -> GradientSet:
    """Propagate an arbitrary dLoss/dy seed back to parameters and input."""
    g = as_tensor(grad_y)
    data: dict = {}
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        cache = trace.caches[idx]
        if isinstance(layer, DenseLayer):
            x = cache["x"]
            grads = {"W": x.T @ g}
            if layer.b is not None:
                grads["b"] = g.sum(axis=0)
            data[idx] = grads
            g = g @ layer.W.T
        elif isinstance(layer, ActivationLayer):
            g = layer.kind.backward(g, cache["z"], cache["a"])
        elif isinstance(layer, DropoutLayer):
            if trace.mode == TRAIN:
                if cache["mask"] is not None:
                    g = g * cache["mask"]
            else:
                g = g * cache["scale"]
        elif isinstance(layer, BatchNormLayer):
            if trace.mode == TRAIN:
                xhat, inv_std, m = cache["xhat"], cache["inv_std"], cache["m"]
                data[idx] = {"alpha": (g * xhat).sum(axis=0), "beta": g.sum(axis=0)}
                gx = g * layer.alpha
                g = inv_std * (
                    gx
                    - gx.mean(axis=0, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=0, keepdims=True)
                )
            else:
                data[idx] = {
                    "alpha": np.zeros_like(layer.alpha),
                    "beta": np.zeros_like(layer.beta),
                }
                g = g * (layer.alpha * cache["inv_std_run"])
    return GradientSet(data=data, penalty={}, d_input=g)


def penalty_gradients(net: Network, reg: RegularizationSpec, batch_rows: int = 1) -> dict:
    """Per-dense-layer gradient of the weight penalty: l2*W + l1*sign(W)."""
    grads = {}
    scale = 1.0 / float(batch_rows) if reg.scale_by_batch else 1.0
    for idx, layer in net.dense_layers():
        g = np.zeros_like(layer.W)
        if reg.lambda_l2:
            g = g + reg.lambda_l2 * layer.W
        if reg.lambda_l1:
            g = g + reg.lambda_l1 * np.sign(layer.W)
        grads[idx] = {"W": g * scale}
    return grads


def backward_pass(net: Network, trace: ForwardTrace, targets, loss: LossSpec,
                  reg: RegularizationSpec) -> GradientSet:
    """Exact gradients of the reduced loss for every trainable parameter."""
    grad_y = loss_output_gradient(trace.y, targets, loss)
    grads = backprop_from_output(net, trace, grad_y)
    grads.penalty = penalty_gradients(net, reg, batch_rows=trace.y.shape[0])
    return grads


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerSpec:
    """Update rule configuration plus per-parameter adam state.

    ``gradient_sign`` scales the descent direction; +1 descends, -1 ascends
    (the knob exists so update-rule mistakes can be reproduced exactly).
    """

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gradient_sign: float = 1.0
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidParameterError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise InvalidParameterError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise InvalidParameterError("adam betas must lie in [0, 1)")

    def reset(self):
        self.state = {}


def _adam_delta(opt: OptimizerSpec, key: str, grad: Tensor) -> Tensor:
    st = opt.state.setdefault(key, {"m": np.zeros_like(grad), "v": np.zeros_like(grad), "t": 0})
    st["t"] += 1
    st["m"] = opt.beta1 * st["m"] + (1 - opt.beta1) * grad
    st["v"] = opt.beta2 * st["v"] + (1 - opt.beta2) * grad * grad
    m_hat = st["m"] / (1 - opt.beta1 ** st["t"])
    v_hat = st["v"] / (1 - opt.beta2 ** st["t"])
    return -opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def apply_update(opt: OptimizerSpec, net: Network, grads: GradientSet) -> dict:
    """Apply one optimizer step in place; returns the parameter deltas.

    Data and penalty gradients are combined here; the returned dict maps
    layer index to {param name: delta} for update-magnitude monitoring.
    """
    deltas: dict = {}
    for idx, layer_grads in grads.data.items():
        layer = net.layers[idx]
        deltas[idx] = {}
        for name in layer_grads:
            g = grads.combined(idx, name) * opt.gradient_sign
            if opt.kind == "sgd":
                delta = -opt.lr * g
            else:
                delta = _adam_delta(opt, f"{idx}.{name}", g)
            deltas[idx][name] = delta
            if isinstance(layer, DenseLayer):
                if name == "W":
                    layer.W = layer.W + delta
                else:
                    layer.b = layer.b + delta
            elif isinstance(layer, BatchNormLayer):
                if name == "alpha":
                    layer.alpha = layer.alpha + delta
                else:
                    layer.beta = layer.beta + delta
    return deltas


# ---------------------------------------------------------------------------
# initialization


_INIT_STRATEGIES = ("lecun", "glorot", "he", "constant", "dummy_normal", "auto")


def recommended_variance(act_name: str, fan_in: int, fan_out: int) -> float:
    """Init variance a given following activation calls for."""
    if act_name in ("relu", "leaky_relu"):
        return 2.0 / fan_in
    if act_name == "tanh":
        return 2.0 / (fan_in + fan_out)
    if act_name == "softmax":
        # small logits, so starting probabilities are near uniform and the
        # initial cross-entropy sits at its ln(K) identity
        return 1.0 / (fan_in * fan_out)
    # sigmoid, identity: variance-preserving scaling
    return 1.0 / fan_in


def strategy_variance(strategy: str, fan_in: int, fan_out: int) -> float:
    if strategy == "lecun":
        return 1.0 / fan_in
    if strategy == "glorot":
        return 2.0 / (fan_in + fan_out)
    if strategy == "he":
        return 2.0 / fan_in
    raise InvalidParameterError(f"no variance rule for strategy {strategy!r}")


def uniform_limit(strategy: str, fan_in: int, fan_out: int) -> float:
    """Half-width of the uniform range matching the strategy's variance."""
    return float(np.sqrt(3.0 * strategy_variance(strategy, fan_in, fan_out)))


def expected_init_variance(net: Network, layer_idx: int) -> float | None:
    """Variance the init check expects for a dense layer, or None if exempt.

    Layers feeding straight into batch normalization are exempt: the batch
    statistics cancel any init scale before it can matter.
    """
    if net.bn_follows(layer_idx):
        return None
    layer = net.layers[layer_idx]
    act = net.following_activation(layer_idx)
    act_name = act.name if act is not None else "identity"
    return recommended_variance(act_name, layer.fan_in, layer.fan_out)


def init_parameters(net: Network, strategy: str, rng: RngStream, *,
                    value: float = 0.5, std: float = 1.0) -> None:
    """(Re)initialize all trainable parameters in place.

    Named schemes draw weights from N(0, sqrt(v)) with the scheme's
    variance v; ``auto`` picks the scheme each layer's following
    activation calls for; ``constant`` fills with ``value`` and
    ``dummy_normal`` draws N(0, std) regardless of fan-in.  Biases are
    zeroed; BN scale/shift reset to 1/0 and moving stats to 0/1.
    """
    if strategy not in _INIT_STRATEGIES:
        raise InvalidParameterError(
            f"unknown init strategy {strategy!r}, expected one of {_INIT_STRATEGIES}"
        )
    for idx, layer in net.dense_layers():
        fan_in, fan_out = layer.fan_in, layer.fan_out
        if strategy == "constant":
            layer.W = np.full((fan_in, fan_out), float(value), dtype=np.float64)
        elif strategy == "dummy_normal":
            layer.W = rng.normal(0.0, std, (fan_in, fan_out))
        else:
            if strategy == "auto":
                if net.bn_follows(idx):
                    var = 1.0 / fan_in
                else:
                    act = net.following_activation(idx)
                    act_name = act.name if act is not None else "identity"
                    var = recommended_variance(act_name, fan_in, fan_out)
            else:
                var = strategy_variance(strategy, fan_in, fan_out)
            layer.W = rng.normal(0.0, float(np.sqrt(var)), (fan_in, fan_out))
        if layer.b is not None:
            layer.b = np.zeros(fan_out, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, BatchNormLayer):
            layer.alpha = np.ones_like(layer.alpha)
            layer.beta = np.zeros_like(layer.beta)
            layer.moving_mean = np.zeros_like(layer.moving_mean)
            layer.moving_var = np.ones_like(layer.moving_var)


# ---------------------------------------------------------------------------
# numerical gradients


def numerical_gradient(f, x: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Centered-difference partials of scalar f at the given flat indices.

    Returns an array of (f(x + h e_i) - f(x - h e_i)) / 2h, one per index;
    all indices when ``indices`` is None.
    """
    if h <= 0:
        raise InvalidParameterError(f"step size must be > 0, got {h}")
    flat = as_tensor(x).ravel().copy()
    shape = np.shape(x)
    if indices is None:
        indices = range(flat.size)
    indices = list(indices)
    out = np.empty(len(indices), dtype=np.float64)
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(flat.reshape(shape))
        flat[i] = orig - h
        f_minus = f(flat.reshape(shape))
        flat[i] = orig
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out
