"""Post-fitting checks: diagnoses that need a real multi-epoch run.

One fork trains normally over the batch stream and serves two checks: the
label-quality test (first-iteration losses per epoch must trend downward)
and the train/inference transfer test.  When the program carries an
augmenter, a second fork trains on augmented batches and is compared
against the plain one on held-out data.

The checks are ordered by what they assume: label quality needs a working
optimizer (the session only requests it when the single-batch fit
succeeded), and the mode-transfer comparison needs labels that mean
something, so it stands down when the label test already fired.
"""

from __future__ import annotations

import numpy as np

from ..nn import INFER, TRAIN, BatchNormLayer, DenseLayer, compute_loss, forward_pass
from ..program import TrainingProgram, evaluate_loss, train_epochs
from ..stats import linear_cka, relative_error, slope_significance
from .context import (
    CORRUPTED_LABELS,
    PHASE_POST,
    SHIFTED_AUGMENTED,
    UNS_MODE_TR,
    CheckContext,
    Finding,
    run_tasks,
)

VALIDATION_ROWS = 200
MIN_EPOCHS_FOR_SLOPE = 4
# The run must end up meaningfully below a fork trained on label-decoupled
# batches; matching that baseline means only the label marginals were
# learnable.  A slope test alone cannot see this: decoupled labels still
# buy a significant early loss drop while the output bias finds the mean.
LABEL_SIGNAL_MARGIN = 0.25
# Tail medians stand in for final losses so one noisy epoch cannot flip
# the comparison.
FINAL_LOSS_TAIL = 5
# Moving statistics that never move are only a problem when they disagree
# with what the batches actually look like.
BN_STALE_LOG_VAR = 0.2
BN_STALE_SHIFT = 0.5


def _finding(check, message, **kw):
    return Finding(check=check, phase=PHASE_POST, message=message, **kw)


def _validation_sample(program: TrainingProgram):
    n = min(VALIDATION_ROWS, program.test_data.X.shape[0])
    return program.test_data.X[:n], program.test_data.Y[:n]


def _mode_view(program: TrainingProgram, x, y, mode: str):
    """Data loss and last hidden activation under one execution mode."""
    net = program.network
    trace = forward_pass(net, x, mode, update_stats=False)
    loss = compute_loss(trace, y, program.loss, program.regularization, net)
    hidden = net.hidden_activation_layers()
    feats = trace.caches[hidden[-1][0]]["a"] if hidden else trace.y
    return loss.data_loss, feats


def _has_mode_sensitive_layers(program: TrainingProgram) -> bool:
    for layer in program.network.layers:
        if hasattr(layer, "pkeep") and layer.pkeep < 1.0:
            return True
        if hasattr(layer, "moving_mean"):
            return True
    return False


def run_post_checks(program: TrainingProgram, ctx: CheckContext, *,
                    batch_fit_ok: bool = True):
    """Train forks for ``ctx.post_epochs`` and run the three checks.

    ``batch_fit_ok`` says whether the single-batch probe fit succeeded.
    The label-quality test only runs when it did: an optimizer that cannot
    even memorize one batch makes a flat epoch-loss curve unreadable as
    evidence about the data.
    """
    findings: list[Finding] = []
    series: dict = {}

    plain = program.fork("post-plain")
    epoch_losses: list[float] = []
    baseline_losses: list[float] = []

    def capture(into):
        def hook(epoch, total, data_loss):
            into.append(data_loss)
        return hook

    def train_plain():
        train_epochs(plain, ctx.post_epochs,
                     first_iteration_hook=capture(epoch_losses))

    tasks = [train_plain]
    baseline = None
    if batch_fit_ok:
        # The label-signal baseline: an identical fork whose batches pair
        # features with decoupled labels, so it can only learn marginals.
        baseline = program.fork("post-label-baseline")
        baseline.stream_mode = "features_only"
        baseline._wire_streams("post-label-baseline")
        tasks.append(lambda: train_epochs(
            baseline, ctx.post_epochs,
            first_iteration_hook=capture(baseline_losses)))
    augmented = program.fork("post-augmented") if program.augmenter is not None else None
    if augmented is not None:
        tasks.append(lambda: train_epochs(augmented, ctx.post_epochs,
                                          use_augmenter=True))
    run_tasks(tasks, ctx.parallel)
    series["epoch_first_loss"] = list(epoch_losses)

    if batch_fit_ok:
        series["baseline_epoch_first_loss"] = list(baseline_losses)
        findings += _check_corrupted_labels(epoch_losses, baseline_losses, ctx)
    if augmented is not None:
        findings += _check_augmentation(plain, augmented, ctx)
    if _has_mode_sensitive_layers(program) and not findings:
        findings += _check_mode_transfer(plain, ctx)
    return findings, series, plain


def _usable_prefix(values):
    usable = []
    for v in values:
        if not np.isfinite(v):
            break
        usable.append(v)
    return usable


def _final_loss(usable):
    tail = usable[-min(FINAL_LOSS_TAIL, len(usable)):]
    return float(np.median(tail))


def _check_corrupted_labels(epoch_losses, baseline_losses, ctx: CheckContext) -> list:
    usable = _usable_prefix(epoch_losses)
    if len(usable) < MIN_EPOCHS_FOR_SLOPE:
        return []
    result = slope_significance(usable, ctx.alpha)
    if not result.improving:
        return [_finding(
            CORRUPTED_LABELS,
            f"first-iteration loss shows no significant improvement over "
            f"{len(usable)} epochs (slope {result.slope:.3g}, "
            f"p={result.p_value:.3g}); labels may not match their instances",
            metric=result.slope, threshold=ctx.alpha)]
    base = _usable_prefix(baseline_losses)
    if len(base) < MIN_EPOCHS_FOR_SLOPE:
        return []
    final = _final_loss(usable)
    floor = _final_loss(base)
    if floor < 1e-9:
        # A baseline this low memorized decoupled labels outright; the
        # comparison says nothing about label quality.
        return []
    if final >= (1.0 - LABEL_SIGNAL_MARGIN) * floor:
        return [_finding(
            CORRUPTED_LABELS,
            f"training ends at {final:.4g}, no better than the {floor:.4g} a "
            f"label-decoupled fork reaches; only the label marginals were "
            "learnable",
            metric=final, threshold=floor)]
    return []


def _check_augmentation(plain: TrainingProgram, augmented: TrainingProgram,
                        ctx: CheckContext) -> list:
    vx, vy = _validation_sample(plain)
    loss_plain = evaluate_loss(plain, vx, vy, INFER).data_loss
    loss_aug = evaluate_loss(augmented, vx, vy, INFER).data_loss
    if not (np.isfinite(loss_plain) and np.isfinite(loss_aug)):
        return []
    _, feats_plain = _mode_view(plain, vx, vy, INFER)
    _, feats_aug = _mode_view(augmented, vx, vy, INFER)
    cka = linear_cka(feats_plain, feats_aug)
    if loss_aug > loss_plain and cka < ctx.cka_augm_min:
        return [_finding(
            SHIFTED_AUGMENTED,
            f"augmented training hurts held-out loss ({loss_aug:.4g} vs "
            f"{loss_plain:.4g}) and shifts learned features (CKA {cka:.3f})",
            metric=cka, threshold=ctx.cka_augm_min)]
    return []


def _check_mode_transfer(trained: TrainingProgram, ctx: CheckContext) -> list:
    findings = _check_bn_updates(trained, ctx)
    vx, vy = _validation_sample(trained)
    loss_inf, feats_inf = _mode_view(trained, vx, vy, INFER)
    loss_tr, feats_tr = _mode_view(trained, vx, vy, TRAIN)
    if not (np.isfinite(loss_tr) and np.isfinite(loss_inf)):
        return findings
    # One-sided on purpose: active dropout makes the train-mode loss worse
    # on a healthy model; only inference losing to train mode points at
    # stale inference-time statistics.
    gap = relative_error(loss_tr, loss_inf) if loss_inf > loss_tr else 0.0
    cka = linear_cka(feats_tr, feats_inf)
    if not findings and (cka < ctx.cka_mode_min or gap > ctx.mode_loss_rel_max):
        findings.append(_finding(
            UNS_MODE_TR,
            f"train and inference modes disagree on the same data "
            f"(loss {loss_tr:.4g} vs {loss_inf:.4g}, gap {gap:.3f}, "
            f"feature CKA {cka:.3f})",
            metric=cka, threshold=ctx.cka_mode_min))
    return findings


def _check_bn_updates(trained: TrainingProgram, ctx: CheckContext) -> list:
    """Probe whether normalization moving statistics track training.

    One stats-updating forward on a fork must move every layer's moving
    estimates.  Estimates that stay bitwise-frozen while the live batch
    statistics disagree with them mean inference will normalize with
    stale values, however training itself behaves.
    """
    probe = trained.fork("bn-update-probe")
    net = probe.network
    rows = min(VALIDATION_ROWS, probe.train_data.X.shape[0])
    x = probe.train_data.X[:rows]
    layers = list(enumerate(net.layers))
    bn = [(i, l) for i, l in layers if isinstance(l, BatchNormLayer)]
    if not bn:
        return []
    before = {i: (l.moving_mean.copy(), l.moving_var.copy()) for i, l in bn}
    trace = forward_pass(net, x, TRAIN, update_stats=True)
    out = []
    for idx, layer in bn:
        mean0, var0 = before[idx]
        if not (np.array_equal(mean0, layer.moving_mean)
                and np.array_equal(var0, layer.moving_var)):
            continue
        batch_var = 1.0 / trace.caches[idx]["inv_std"] ** 2 - layer.eps
        log_vr = float(np.mean(np.abs(
            np.log((var0 + layer.eps) / (batch_var + layer.eps)))))
        shift = _bn_mean_shift(net, trace, idx, mean0, batch_var, layer.eps)
        if log_vr > BN_STALE_LOG_VAR or shift > BN_STALE_SHIFT:
            out.append(_finding(
                UNS_MODE_TR,
                f"moving statistics never update and sit away from the live "
                f"batch (mean shift {shift:.3g} sd, log variance ratio "
                f"{log_vr:.3g}); inference will normalize with stale values",
                layer=f"batchnorm{idx}", metric=log_vr,
                threshold=BN_STALE_LOG_VAR))
    return out


def _bn_mean_shift(net, trace, idx, frozen_mean, batch_var, eps) -> float:
    """Mean of |moving mean - batch mean| in units of the batch sd.

    The batch mean is not cached, so it is recomputed from the preceding
    dense layer's cache; a normalization layer fed by anything else only
    reports its variance mismatch.
    """
    if idx == 0 or not isinstance(net.layers[idx - 1], DenseLayer):
        return 0.0
    dense = net.layers[idx - 1]
    fed = trace.caches[idx - 1]["x"] @ dense.W
    if dense.b is not None:
        fed = fed + dense.b
    batch_mean = fed.mean(axis=0)
    return float(np.mean(np.abs(frozen_mean - batch_mean) / np.sqrt(batch_var + eps)))
