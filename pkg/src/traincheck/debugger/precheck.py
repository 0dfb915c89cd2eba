"""Pre-training checks: everything verifiable before real training starts.

These run on the untouched program plus one stratified probe batch.  They
cover data conditioning, initialization, loss plausibility, structural
dependency probes, a numerical gradient audit, and a single-batch
memorization test.  Each check returns a list of findings (possibly empty)
and never mutates the program under debug: anything that must train does so
on a fork.
"""

from __future__ import annotations

import numpy as np

from ..data import CLASSIFICATION, REGRESSION
from ..nn import (
    INFER,
    RegularizationSpec,
    backprop_from_output,
    compute_loss,
    expected_init_variance,
    forward_pass,
    layer_labels,
    numerical_gradient,
)
from ..program import (
    TrainingProgram,
    evaluate_loss,
    fit_reached,
    predict,
    train_on_batch,
    train_step,
)
from ..stats import (
    f_test_variance,
    relative_error,
    shannon_equitability,
    smoothness_ratio,
)
from ..tensor import RngStream
from .context import (
    CONST_FEAT,
    DIV_LOSS,
    INV_GRAD,
    INV_INP_DEP,
    INV_LOSS_DEP,
    INV_OUT_DEP,
    INV_OUTS,
    MISS_B,
    NAN_INPS,
    PHASE_PRE,
    PI_B,
    PI_LOSS,
    PI_W,
    UN_FIT_BATCH,
    UN_SYM_W,
    UNBALANCED_LABELS,
    UNS_INPS,
    UNS_OUTS,
    ZERO_LOSS,
    CheckContext,
    Finding,
    run_tasks,
)


def _finding(check, message, **kw):
    return Finding(check=check, phase=PHASE_PRE, message=message, **kw)


def _matrix_scaled(m, ctx: CheckContext) -> tuple[bool, str]:
    """Accept standardized or bounded-with-real-spread feature matrices."""
    means = m.mean(axis=0)
    stds = m.std(axis=0)
    if np.abs(means).max() <= ctx.scaling_mean_tol and \
            stds.min() >= ctx.scaling_std_low and stds.max() <= ctx.scaling_std_high:
        return True, "standardized"
    lo, hi = float(m.min()), float(m.max())
    span = hi - lo
    if span >= ctx.scaled_span_min and hi <= 1.0 + ctx.bounds_tol:
        if lo >= -ctx.bounds_tol:
            return True, "bounded [0, 1]"
        if lo >= -1.0 - ctx.bounds_tol:
            return True, "bounded [-1, 1]"
    detail = (f"column means in [{means.min():.4g}, {means.max():.4g}], "
              f"stds in [{stds.min():.4g}, {stds.max():.4g}], "
              f"values in [{lo:.4g}, {hi:.4g}]")
    return False, detail


def check_data_scaling(program: TrainingProgram, ctx: CheckContext) -> list:
    """Features (and regression targets) must arrive conditioned."""
    findings = []
    x = program.train_data.X
    y = program.train_data.Y
    bad = int(np.size(x) - np.isfinite(x).sum())
    if bad:
        findings.append(_finding(NAN_INPS, f"{bad} non-finite feature values", metric=bad))
        return findings
    bad_y = int(np.size(y) - np.isfinite(y).sum())
    if bad_y:
        findings.append(_finding(NAN_INPS, f"{bad_y} non-finite target values", metric=bad_y))
        return findings
    constant = np.flatnonzero(x.std(axis=0) == 0.0)
    if constant.size:
        head = ", ".join(str(c) for c in constant[:5])
        findings.append(_finding(
            CONST_FEAT, f"{constant.size} constant feature columns (e.g. {head})",
            metric=float(constant.size)))
    ok, detail = _matrix_scaled(x, ctx)
    if not ok:
        findings.append(_finding(UNS_INPS, f"features look unconditioned: {detail}"))
    if program.problem == REGRESSION:
        ok, detail = _matrix_scaled(y, ctx)
        if not ok:
            findings.append(_finding(UNS_OUTS, f"targets look unconditioned: {detail}"))
    return findings


def labels_balanced(program: TrainingProgram, ctx: CheckContext) -> bool:
    if program.problem != CLASSIFICATION:
        return True
    eq = shannon_equitability(program.train_data.class_counts())
    return eq >= ctx.shannon_min


def check_label_balance(program: TrainingProgram, ctx: CheckContext) -> list:
    if program.problem != CLASSIFICATION:
        return []
    counts = program.train_data.class_counts()
    eq = shannon_equitability(counts)
    if eq < ctx.shannon_min:
        return [_finding(
            UNBALANCED_LABELS,
            f"label equitability {eq:.3f} below {ctx.shannon_min} "
            f"(class counts {counts.tolist()})",
            metric=eq, threshold=ctx.shannon_min)]
    return []


def check_weight_init(program: TrainingProgram, ctx: CheckContext) -> list:
    """Initial weights: symmetric-broken, and variance near a sane recipe."""
    findings = []
    net = program.network
    labels = layer_labels(net)
    for idx, layer in net.dense_layers():
        w = layer.W
        var = float(w.var(ddof=1)) if w.size > 1 else 0.0
        if var == 0.0:
            findings.append(_finding(
                UN_SYM_W, f"constant initial weights (value {w.flat[0]:.4g})",
                layer=labels[idx], metric=0.0))
            continue
        expected = expected_init_variance(net, idx)
        if expected is None:
            continue
        result = f_test_variance(var, w.size, expected, ctx.alpha)
        if not result.passed:
            findings.append(_finding(
                PI_W,
                f"weight variance {var:.4g} incompatible with recommended "
                f"{expected:.4g} (p={result.p_value:.3g})",
                layer=labels[idx], metric=var, threshold=expected))
    return findings


def check_bias_init(program: TrainingProgram, ctx: CheckContext, balanced: bool) -> list:
    findings = []
    net = program.network
    labels = layer_labels(net)
    dense = net.dense_layers()
    out_idx = dense[-1][0]
    for idx, layer in dense:
        if layer.b is None:
            findings.append(_finding(MISS_B, "dense layer has no bias term",
                                     layer=labels[idx]))
            continue
        is_output = idx == out_idx
        if program.problem == CLASSIFICATION and not balanced and is_output:
            # A default zero bias is the label-balance finding's business;
            # PI-B fires only on a deliberate but wrong output bias.
            if np.any(layer.b != 0.0):
                counts = program.train_data.class_counts().astype(float)
                p = counts / counts.sum()
                with np.errstate(divide="ignore"):
                    want = np.log(p / (1.0 - p))
                if not np.allclose(layer.b, want, atol=ctx.bias_tol, rtol=1e-4):
                    findings.append(_finding(
                        PI_B,
                        "unbalanced labels: output bias should be log(p/(1-p)) "
                        "per class",
                        layer=labels[idx],
                        metric=float(np.abs(layer.b - want).max())))
            continue
        if program.problem == REGRESSION and is_output:
            y = program.train_data.Y
            mean = y.mean(axis=0)
            std = y.std(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                cv = np.where(mean == 0.0, np.inf, std / np.abs(mean))
            if np.all(cv < ctx.regression_bias_cv):
                if not np.allclose(layer.b, mean, atol=ctx.bias_tol, rtol=1e-4):
                    findings.append(_finding(
                        PI_B,
                        "near-constant targets: output bias should equal target mean",
                        layer=labels[idx],
                        metric=float(np.abs(layer.b - mean).max())))
                continue
        worst = float(np.abs(layer.b).max())
        if worst > ctx.bias_tol:
            findings.append(_finding(
                PI_B, f"initial bias should be zero (max |b| = {worst:.4g})",
                layer=labels[idx], metric=worst, threshold=ctx.bias_tol))
    return findings


def _data_loss(program, x, y) -> float:
    return evaluate_loss(program, x, y, INFER).data_loss


def check_initial_loss(program: TrainingProgram, x, y, ctx: CheckContext,
                       balanced: bool) -> list:
    findings = []
    base = _data_loss(program, x, y)
    if program.problem == CLASSIFICATION and balanced and \
            program.loss.kind == "cross_entropy":
        expected = float(np.log(program.network.n_outputs))
        dev = relative_error(base, expected) if np.isfinite(base) else np.inf
        if dev > ctx.initial_loss_rel_tol:
            grade = "huge error vs" if dev > 1.0 else "off"
            findings.append(_finding(
                PI_LOSS,
                f"initial loss {base:.4g} {grade} expected ln(K)={expected:.4g} "
                f"(relative deviation {dev:.3g})",
                metric=base, threshold=expected))
    if np.isfinite(base) and base > 1e-12:
        doubled = _data_loss(program, np.concatenate([x, x]), np.concatenate([y, y]))
        ratio = doubled / base
        if ctx.initial_loss_sum_low <= ratio <= ctx.initial_loss_sum_high:
            findings.append(_finding(
                PI_LOSS,
                f"loss scales with batch size (x2 batch gives x{ratio:.3g} loss); "
                "reduction looks like a sum, not a mean",
                metric=ratio))
    return findings


def check_outputs(program: TrainingProgram, x, y, ctx: CheckContext) -> list:
    """Untrained outputs must already have the right form for the loss."""
    yhat = predict(program, x)
    if not np.all(np.isfinite(yhat)):
        return [_finding(INV_OUTS, "non-finite network outputs on the probe batch")]
    tol = ctx.output_tol
    if program.problem == CLASSIFICATION:
        sums = yhat.sum(axis=1)
        off_range = max(float(-yhat.min()), float(yhat.max() - 1.0))
        off_sum = float(np.abs(sums - 1.0).max())
        if off_range > tol or off_sum > tol:
            return [_finding(
                INV_OUTS,
                f"outputs are not probabilities (range excess {max(off_range, 0):.4g}, "
                f"row-sum deviation {off_sum:.4g})",
                metric=max(off_range, off_sum), threshold=tol)]
        return []
    kind = program.network.output_activation()
    if kind is None:
        return []
    lo, hi = kind.bounds
    t = program.train_data.Y
    if t.min() < lo - tol or t.max() > hi + tol:
        return [_finding(
            INV_OUTS,
            f"output activation range [{lo:.4g}, {hi:.4g}] cannot reach targets "
            f"in [{t.min():.4g}, {t.max():.4g}]")]
    return []


def _instance_loss_seed(y, targets, loss, i):
    """Gradient of instance i's per-instance loss w.r.t. the network output.

    The instance axis follows the loss spec: a wrong class axis makes the
    decomposition couple rows, which is exactly what the probe must expose.
    """
    seed = np.zeros_like(y)
    if loss.kind == "mse":
        r = y.shape[1]
        i = i % y.shape[0]
        if loss.mse_pairwise:
            seed[i] = 2.0 * (y[i] - targets.mean(axis=0)) / r
        else:
            seed[i] = 2.0 * (y[i] - targets[i]) / r
        return seed, i
    ax = loss.class_axis
    inst_axis = 1 - ax
    i = i % y.shape[inst_axis]
    if loss.from_logits:
        shifted = y - y.max(axis=ax, keepdims=True)
        e = np.exp(shifted)
        soft = e / e.sum(axis=ax, keepdims=True)
        full = soft * targets.sum(axis=ax, keepdims=True) - targets
    else:
        full = -targets / (y + loss.epsilon)
    if inst_axis == 0:
        seed[i, :] = full[i, :]
    else:
        seed[:, i] = full[:, i]
    return seed, i


def check_dependencies(program: TrainingProgram, x, y, ctx: CheckContext) -> list:
    """Instance i's loss and outputs may depend on instance i's features only."""
    findings = []
    net = program.network
    trace = forward_pass(net, x, INFER, update_stats=False)
    m = x.shape[0]
    probes = sorted({0, m // 2, m - 1})

    worst = 0.0
    for i in probes:
        seed, own = _instance_loss_seed(trace.y, y, program.loss, i)
        grad = backprop_from_output(net, trace, seed).d_input
        stray = np.abs(np.delete(grad, own, axis=0))
        if stray.size:
            worst = max(worst, float(stray.max()))
    if worst > ctx.dependency_tol:
        findings.append(_finding(
            INV_LOSS_DEP,
            f"per-instance loss leaks across instances (stray input gradient "
            f"{worst:.3g})",
            metric=worst, threshold=ctx.dependency_tol))

    worst = 0.0
    for i in probes:
        seed = np.zeros_like(trace.y)
        seed[i, i % net.n_outputs] = 1.0
        grad = backprop_from_output(net, trace, seed).d_input
        stray = np.abs(np.delete(grad, i, axis=0))
        if stray.size:
            worst = max(worst, float(stray.max()))
    if worst > ctx.dependency_tol:
        findings.append(_finding(
            INV_OUT_DEP,
            f"output units leak across instances (stray input gradient {worst:.3g})",
            metric=worst, threshold=ctx.dependency_tol))
    return findings


def _probe_params(net):
    """(layer index, layer, parameter name) for every trainable tensor."""
    out = []
    for idx, layer in enumerate(net.layers):
        if hasattr(layer, "W"):
            out.append((idx, layer, "W"))
            if layer.b is not None:
                out.append((idx, layer, "b"))
        elif hasattr(layer, "alpha"):
            out.append((idx, layer, "alpha"))
            out.append((idx, layer, "beta"))
    return out


def check_gradients(program: TrainingProgram, x, y, ctx: CheckContext) -> list:
    """Analytic backprop vs centered differences on sampled coordinates.

    Runs on a fork with regularization off and dropout disabled, after a
    short burn-in so the comparison happens away from the init point.
    """
    probe = program.fork("gradient-check")
    probe.regularization = RegularizationSpec(0.0, 0.0)
    for layer in probe.network.layers:
        if hasattr(layer, "pkeep"):
            layer.pkeep = 1.0
    for _ in range(ctx.grad_burn_in):
        train_step(probe, x, y)

    net = probe.network
    trace = forward_pass(net, x, mode="train", update_stats=False)
    loss0 = compute_loss(trace, y, probe.loss, probe.regularization, net)
    if not np.isfinite(loss0.total):
        return [_finding(DIV_LOSS, "non-finite loss during gradient audit; "
                                   "skipping numerical comparison")]
    grads = backprop_from_output(
        net, trace,
        _output_grad(trace.y, y, probe.loss))
    labels = layer_labels(net)
    rng = RngStream(ctx.seed).split("gradient-coords")

    worst = 0.0
    worst_layer = None
    for idx, layer, name in _probe_params(net):
        tensor = getattr(layer, name)
        k = min(ctx.grad_samples, tensor.size)
        coords = rng.choice(tensor.size, size=k, replace=False)
        analytic = grads.data[idx][name].ravel()[coords]

        def f(candidate, _layer=layer, _name=name):
            original = getattr(_layer, _name)
            setattr(_layer, _name, candidate)
            try:
                t = forward_pass(net, x, mode="train", update_stats=False)
                return compute_loss(t, y, probe.loss, probe.regularization, net).total
            finally:
                setattr(_layer, _name, original)

        numeric = numerical_gradient(f, tensor, h=ctx.grad_step, indices=coords)
        for c, a, n in zip(coords, analytic, numeric):
            if max(abs(a), abs(n)) <= ctx.grad_floor:
                continue
            err = relative_error(a, n)
            if err <= ctx.grad_rel_err_max or err <= worst:
                continue
            # Cross-check the estimator against itself before blaming the
            # backprop: a kink inside the difference bracket moves the
            # estimate with the step size, a wrong analytic gradient on a
            # smooth surface does not.
            refined = numerical_gradient(f, tensor, h=ctx.grad_step / 2,
                                         indices=[c])[0]
            if relative_error(n, refined) > ctx.grad_rel_err_max:
                continue
            err = relative_error(a, refined)
            if err > worst:
                worst, worst_layer = err, labels[idx]
    if worst > ctx.grad_rel_err_max:
        return [_finding(
            INV_GRAD,
            f"analytic gradient disagrees with numerical estimate "
            f"(max relative error {worst:.3g})",
            layer=worst_layer, metric=worst, threshold=ctx.grad_rel_err_max)]
    return []


def _output_grad(y, targets, loss):
    from ..nn import loss_output_gradient
    return loss_output_gradient(y, targets, loss)


def check_input_dependency(program: TrainingProgram, x, y, ctx: CheckContext) -> list:
    """Training on real features must beat training on zeroed features.

    Improvements are compared rather than final losses: the two runs start
    from different loss levels, so absolute comparison would be noise.  The
    probe is conclusive only when neither run degrades outright; a real
    run that makes the loss worse points at a broken update rule, which
    other checks own, not at input wiring.
    """
    real = program.fork("input-dep-real")
    zero = program.fork("input-dep-zero")
    xz = np.zeros_like(x)

    def fit(prog, data):
        before = _data_loss(prog, data, y)
        train_on_batch(prog, data, y, ctx.input_dep_iterations)
        return before - _data_loss(prog, data, y)

    real_gain, zero_gain = run_tasks(
        [lambda: fit(real, x), lambda: fit(zero, xz)], ctx.parallel)
    if not (np.isfinite(real_gain) and np.isfinite(zero_gain)):
        return []
    if 0.0 <= real_gain <= zero_gain:
        return [_finding(
            INV_INP_DEP,
            f"{ctx.input_dep_iterations} iterations improved the loss no more on "
            f"real features ({real_gain:.4g}) than on zeroed features "
            f"({zero_gain:.4g})",
            metric=real_gain, threshold=zero_gain)]
    return []


def check_batch_fit(program: TrainingProgram, x, y, ctx: CheckContext):
    """A healthy program must memorize one small batch completely."""
    findings = []
    probe = program.fork("batch-fit")
    losses = train_on_batch(probe, x, y, ctx.max_fit_iterations,
                            callback=lambda s: bool(np.isfinite(s.loss.total)))
    if not np.isfinite(losses[-1]):
        findings.append(_finding(
            DIV_LOSS, f"loss became non-finite at iteration {len(losses)} "
                      "while fitting a single batch",
            iteration=len(losses), fatal=True))
        return findings, losses
    if not fit_reached(probe, x, y, ctx.overfit_mae):
        metric = program.metric(predict(probe, x), y)
        target = "100% accuracy" if program.problem == CLASSIFICATION \
            else f"MAE <= {ctx.overfit_mae:g}"
        findings.append(_finding(
            UN_FIT_BATCH,
            f"could not memorize a {x.shape[0]}-instance batch in "
            f"{ctx.max_fit_iterations} iterations ({program.metric_name} "
            f"{metric:.4g}, wanted {target})",
            metric=metric))
    # Smoothness is judged from the first sub-threshold crossing onward: a
    # missing penalty lets the curve settle flat at zero, while a live one
    # keeps it bouncing around a positive floor and never lets it stay down.
    arr = np.asarray(losses)
    below = np.nonzero(arr < ctx.zero_loss_eps)[0]
    if below.size and arr[-1] < ctx.zero_loss_eps:
        smooth = smoothness_ratio(arr[below[0]:])
        if smooth > ctx.zero_loss_smoothness:
            findings.append(_finding(
                ZERO_LOSS,
                f"total loss collapsed to {arr[-1]:.3g} and stayed below "
                f"{ctx.zero_loss_eps:g} with smoothness {smooth:.3f}; "
                "objective may be missing terms",
                metric=float(arr[-1]), threshold=ctx.zero_loss_eps))
    return findings, losses
