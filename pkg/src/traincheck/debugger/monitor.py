"""Monitored single-batch fitting: the on-training phase.

The monitor trains a fork of the program on the stratified probe batch and,
every ``period`` iterations, snapshots losses, parameters, updates,
gradients, and sampled activations into a ring buffer.  Checks read the
buffer only, so their cost is independent of how long training runs, and a
violation must persist for ``forbearance_periods`` consecutive hooks before
it becomes a finding (validity checks on outputs are exempt: they describe
state, not noise).

Once the batch has been memorized, checks that diagnose slowness are
retired for the rest of the phase; a converged program parked at its
optimum is supposed to look slow.  Divergence checks stay armed.
"""

from __future__ import annotations

import numpy as np

from ..nn import INFER, ActivationLayer, DenseLayer, layer_labels
from ..program import TrainingProgram, evaluate_loss, fit_reached, train_step
from ..stats import (
    DIVERGING,
    VANISHING,
    f_test_variance,
    pearson_correlation,
    saturation_rho,
    smoothness_ratio,
    trend_test,
)
from ..tensor import RngStream
from .context import (
    DEAD_RELU,
    DEAD_W,
    DIV_B,
    DIV_GRAD,
    DIV_LOSS,
    DIV_W,
    HF_LOSS,
    INV_OUTS,
    NEG_W,
    NR_LOSS,
    OUT_RANGE_ACT,
    OVER_REG_LOSS,
    PHASE_FIT,
    SAT_ACT,
    SD_LOSS,
    UNS_ACT_HS,
    UNS_ACT_LS,
    UNTRAINED_PARAMS,
    VAN_GRAD,
    W_UP_FAST,
    W_UP_SLOW,
    CheckContext,
    Finding,
    RingBuffer,
    Snapshot,
)

# Checks retired once the probe batch has been memorized.
SLOWNESS_CHECKS = frozenset({SD_LOSS, HF_LOSS, NR_LOSS, W_UP_SLOW, VAN_GRAD,
                             OVER_REG_LOSS})
# Also retired then: spread bounds audit a network that is still learning,
# and a memorized batch legitimately sharpens its activations.
DISTRIBUTION_CHECKS = frozenset({UNS_ACT_LS, UNS_ACT_HS})
# Checks that fire on the first violating hook.
IMMEDIATE_CHECKS = frozenset({INV_OUTS, OUT_RANGE_ACT})


class Violation:
    """One rule breach observed at a single hook (pre-forbearance)."""

    __slots__ = ("check", "layer", "message", "metric", "threshold")

    def __init__(self, check, message, layer=None, metric=None, threshold=None):
        self.check = check
        self.layer = layer
        self.message = message
        self.metric = metric
        self.threshold = threshold

    @property
    def key(self):
        return (self.check, self.layer)


class FitMonitor:
    """Trains a fork on one batch while auditing its dynamics."""

    def __init__(self, program: TrainingProgram, x, y, ctx: CheckContext):
        self.program = program.fork("monitored-fit")
        self.x = x
        self.y = y
        self.ctx = ctx
        self.buffer = RingBuffer(ctx.buffer_size)
        self.findings: list[Finding] = []
        self.series: dict = {"iteration": [], "loss": [], "data_loss": [],
                             "metric": [], "fit": []}
        self._streaks: dict = {}
        self._emitted: set = set()
        self._lowest = np.inf
        self._fit = False
        self._act_was_healthy: set = set()
        net = self.program.network
        self.labels = layer_labels(net)
        self._dense = [(i, l) for i, l in net.dense_layers()]
        self._hidden_acts = list(net.hidden_activation_layers())
        self._reg_active = (program.regularization.lambda_l1 > 0.0 or
                            program.regularization.lambda_l2 > 0.0)
        self._act_cols = self._sample_columns(net)

    def _sample_columns(self, net):
        """Fix, per activation layer, which neurons get recorded."""
        widths = {}
        cur = None
        for idx, layer in enumerate(net.layers):
            if isinstance(layer, DenseLayer):
                cur = layer.fan_out
            widths[idx] = cur
        cols = {}
        rng = RngStream(self.ctx.seed)
        for idx, _ in self._hidden_acts:
            width = widths[idx]
            k = min(self.ctx.act_sample_neurons, width)
            cols[idx] = np.sort(rng.split(f"act-sample-{idx}").choice(
                width, size=k, replace=False))
        return cols

    # -- driving ------------------------------------------------------------

    def run(self):
        ctx = self.ctx
        # The best loss the run has ever seen includes its starting point;
        # a run that only worsens would otherwise measure against an
        # already-degraded value.
        initial = evaluate_loss(self.program, self.x, self.y, INFER)
        if np.isfinite(initial.data_loss):
            self._lowest = initial.data_loss
        for i in range(1, ctx.max_fit_iterations + 1):
            step = train_step(self.program, self.x, self.y, iteration=i)
            total = step.loss.total
            if not np.isfinite(total):
                self.findings.append(Finding(
                    check=DIV_LOSS, phase=PHASE_FIT, iteration=i, fatal=True,
                    message=f"loss became non-finite at iteration {i}"))
                break
            self._lowest = min(self._lowest, step.loss.data_loss)
            if i % ctx.period == 0:
                snap = self._snapshot(i, step)
                self.buffer.push(snap)
                self._record(snap)
                self._evaluate_hook(snap)
                if ctx.failed_on and self.findings:
                    break
        return self.findings, self.series

    def _snapshot(self, iteration, step) -> Snapshot:
        total = step.loss.total
        # Ratio on the data term: the penalty addend inflates a small best
        # value proportionally more than a diverged plateau, biasing a
        # total-loss ratio toward 1.
        data = step.loss.data_loss
        if self._lowest <= 0.0:
            ratio = 1.0 if data <= self._lowest else np.inf
        else:
            ratio = data / self._lowest
        if not self._fit:
            self._fit = fit_reached(self.program, self.x, self.y, self.ctx.overfit_mae)
        params, deltas, dgrads, pgrads = {}, {}, {}, {}
        for idx, layer in self._dense:
            label = self.labels[idx]
            params[label] = {"W": layer.W.copy(),
                            "b": None if layer.b is None else layer.b.copy()}
            deltas[label] = {k: v.copy() for k, v in step.deltas.get(idx, {}).items()}
            dgrads[label] = {k: v.copy() for k, v in step.grads.data[idx].items()}
            if idx in step.grads.penalty:
                pgrads[label] = step.grads.penalty[idx]["W"].copy()
        acts = {}
        for idx, _ in self._hidden_acts:
            a = step.trace.caches[idx]["a"]
            acts[self.labels[idx]] = a[:, self._act_cols[idx]].copy()
        return Snapshot(
            iteration=iteration, loss=total, data_loss=step.loss.data_loss,
            penalty=step.loss.penalty,
            metric=self.program.metric(step.trace.y, self.y),
            loss_ratio=ratio, fit=self._fit,
            params=params, deltas=deltas, data_grads=dgrads,
            penalty_grads=pgrads, activations=acts, output=step.trace.y.copy())

    def _record(self, snap: Snapshot):
        s = self.series
        s["iteration"].append(snap.iteration)
        s["loss"].append(snap.loss)
        s["data_loss"].append(snap.data_loss)
        s["metric"].append(snap.metric)
        s["fit"].append(bool(snap.fit))
        for idx, _ in self._dense:
            label = self.labels[idx]
            s.setdefault(f"grad_mean/{label}", []).append(
                float(np.abs(snap.data_grads[label]["W"]).mean()))
            s.setdefault(f"weight_mean/{label}", []).append(
                float(np.abs(snap.params[label]["W"]).mean()))
            s.setdefault(f"update_ratio/{label}", []).append(
                _update_log_ratio(snap, label))

    # -- hook evaluation ----------------------------------------------------

    def _evaluate_hook(self, snap: Snapshot):
        snaps = self.buffer.items()
        violations = []
        violations += self._check_loss_curve(snaps)
        violations += self._check_correlation(snaps)
        violations += self._check_gradients(snaps)
        violations += self._check_parameters(snaps)
        violations += self._check_activations(snaps)
        if self._fit:
            violations = [v for v in violations
                          if v.check not in SLOWNESS_CHECKS
                          and v.check not in DISTRIBUTION_CHECKS]

        active = {v.key for v in violations}
        for key in list(self._streaks):
            if key not in active:
                del self._streaks[key]
        for v in violations:
            streak = self._streaks.get(v.key, 0) + 1
            self._streaks[v.key] = streak
            required = 1 if v.check in IMMEDIATE_CHECKS \
                else self.ctx.forbearance_periods
            if streak >= required and v.key not in self._emitted:
                self._emitted.add(v.key)
                self.findings.append(Finding(
                    check=v.check, phase=PHASE_FIT, message=v.message,
                    layer=v.layer, iteration=snap.iteration,
                    metric=v.metric, threshold=v.threshold))

    def _check_loss_curve(self, snaps) -> list:
        ctx = self.ctx
        out = []
        # Decay and smoothness judge the fitting signal; the penalty term
        # sets a floor on the total that would mask real progress.
        losses = [s.data_loss for s in snaps]
        ratios = [s.loss_ratio for s in snaps]
        diverging = len(ratios) > ctx.window and trend_test(
            ratios, DIVERGING, ctx.window,
            low_bound=ctx.div_low_bound, high_bound=ctx.van_high_bound)
        if diverging or ratios[-1] > ctx.div_loss_ratio_max:
            out.append(Violation(
                DIV_LOSS,
                f"loss sits at {ratios[-1]:.3g}x its best value and is not recovering",
                metric=ratios[-1]))
        if len(losses) > ctx.window:
            tail = losses[-(ctx.window + 1):]
            decays = [0.0 if prev == 0.0 else (prev - cur) / abs(prev)
                      for prev, cur in zip(tail, tail[1:])]
            if all(d < ctx.min_loss_decay for d in decays):
                out.append(Violation(
                    SD_LOSS,
                    f"loss decayed under {ctx.min_loss_decay:.0%} per period for "
                    f"{ctx.window} consecutive periods",
                    metric=max(decays), threshold=ctx.min_loss_decay))
            smooth = smoothness_ratio(losses)
            if smooth < ctx.fluct_smoothness_min:
                out.append(Violation(
                    HF_LOSS,
                    f"loss curve smoothness {smooth:.3f} under "
                    f"{ctx.fluct_smoothness_min}",
                    metric=smooth, threshold=ctx.fluct_smoothness_min))
        return out

    def _check_correlation(self, snaps) -> list:
        ctx = self.ctx
        if len(snaps) < ctx.corr_min_points:
            return []
        losses = np.array([s.data_loss for s in snaps])
        # A plateaued loss makes the correlation undefined, not weak; under
        # a few percent of relative movement the curve is sampling noise.
        if losses.std() <= 0.02 * max(float(np.abs(losses).mean()), 1e-12):
            return []
        r = pearson_correlation(losses, [s.metric for s in snaps])
        if abs(r) < ctx.corr_min:
            return [Violation(
                NR_LOSS,
                f"loss and {self.program.metric_name} barely correlate "
                f"(|r|={abs(r):.3f})",
                metric=abs(r), threshold=ctx.corr_min)]
        return []

    def _check_gradients(self, snaps) -> list:
        ctx = self.ctx
        out = []
        if len(snaps) <= ctx.window:
            return out
        for idx, _ in self._dense:
            label = self.labels[idx]
            series = [float(np.abs(s.data_grads[label]["W"]).mean()) for s in snaps]
            tail = series[-(ctx.window + 1):]
            if trend_test(series, VANISHING, ctx.window,
                          low_bound=ctx.div_low_bound,
                          high_bound=ctx.van_high_bound) or \
                    max(tail) < ctx.grad_dead_eps:
                out.append(Violation(
                    VAN_GRAD, f"data gradients are vanishing (now {series[-1]:.3g})",
                    layer=label, metric=series[-1]))
            elif trend_test(series, DIVERGING, ctx.window,
                            low_bound=ctx.div_low_bound,
                            high_bound=ctx.van_high_bound):
                out.append(Violation(
                    DIV_GRAD, f"data gradients are exploding (now {series[-1]:.3g})",
                    layer=label, metric=series[-1]))
            if self._reg_active:
                ratios = [_reg_ratio(s, label) for s in snaps]
                if trend_test(ratios, DIVERGING, ctx.window,
                              low_bound=ctx.div_low_bound,
                              high_bound=ctx.van_high_bound):
                    out.append(Violation(
                        OVER_REG_LOSS,
                        "penalty gradients are outgrowing data gradients "
                        f"(ratio now {ratios[-1]:.3g})",
                        layer=label, metric=ratios[-1]))
                elif self._penalty_dominates(snaps, ratios):
                    out.append(Violation(
                        OVER_REG_LOSS,
                        "penalty gradients outweigh data gradients "
                        f"(ratio now {ratios[-1]:.3g}) while only the "
                        "penalty term improves",
                        layer=label, metric=ratios[-1]))
        return out

    def _penalty_dominates(self, snaps, ratios) -> bool:
        """Is the optimizer spending the whole window on the penalty?

        At an over-regularized equilibrium the penalty and data gradients
        balance, so their ratio settles instead of growing; the tell is a
        total loss that keeps improving while the data term does not.
        """
        ctx = self.ctx
        tail = snaps[-(ctx.window + 1):]
        rt = ratios[-(ctx.window + 1):]
        # A settling ratio marks equilibrium; a growing one means the data
        # gradient is dying under the penalty's steady pressure, which is a
        # dead network's signature, not an oversized penalty's.
        if not np.all(np.isfinite(rt)) or min(rt) <= 1.0 or rt[-1] > rt[0]:
            return False
        totals = [s.loss for s in tail]
        datas = [s.data_loss for s in tail]
        total_decay = (totals[0] - totals[-1]) / max(abs(totals[0]), 1e-12)
        data_decay = (datas[0] - datas[-1]) / max(abs(datas[0]), 1e-12)
        return total_decay >= ctx.min_loss_decay and \
            data_decay < ctx.min_loss_decay

    def _check_parameters(self, snaps) -> list:
        ctx = self.ctx
        out = []
        last = snaps[-1]
        for idx, _ in self._dense:
            label = self.labels[idx]
            log_ratio = _update_log_ratio(last, label)
            if log_ratio > ctx.update_ratio_high:
                out.append(Violation(
                    W_UP_FAST,
                    f"update-to-weight ratio 1e{log_ratio:.2f} above "
                    f"1e{ctx.update_ratio_high:g}",
                    layer=label, metric=log_ratio, threshold=ctx.update_ratio_high))
            elif log_ratio < ctx.update_ratio_low:
                out.append(Violation(
                    W_UP_SLOW,
                    f"update-to-weight ratio 1e{log_ratio:.2f} below "
                    f"1e{ctx.update_ratio_low:g}",
                    layer=label, metric=log_ratio, threshold=ctx.update_ratio_low))
            w = last.params[label]["W"]
            dead = float((np.abs(w) < ctx.dead_weight_eps).mean())
            if dead > ctx.weight_extreme_ratio:
                out.append(Violation(
                    DEAD_W, f"{dead:.0%} of weights are numerically zero",
                    layer=label, metric=dead, threshold=ctx.weight_extreme_ratio))
            neg = float((w < 0.0).mean())
            if neg > ctx.weight_extreme_ratio:
                out.append(Violation(
                    NEG_W, f"{neg:.0%} of weights are negative",
                    layer=label, metric=neg, threshold=ctx.weight_extreme_ratio))
            if len(snaps) > ctx.window:
                wseries = [float(np.abs(s.params[label]["W"]).mean()) for s in snaps]
                if trend_test(wseries, DIVERGING, ctx.window,
                              low_bound=ctx.div_low_bound,
                              high_bound=ctx.van_high_bound):
                    out.append(Violation(
                        DIV_W, f"weight magnitudes are exploding "
                               f"(mean |W| now {wseries[-1]:.3g})",
                        layer=label, metric=wseries[-1]))
                if last.params[label]["b"] is not None:
                    bseries = [float(np.abs(s.params[label]["b"]).mean())
                               for s in snaps]
                    if trend_test(bseries, DIVERGING, ctx.window,
                                  low_bound=ctx.div_low_bound,
                                  high_bound=ctx.van_high_bound):
                        out.append(Violation(
                            DIV_B, f"bias magnitudes are exploding "
                                   f"(mean |b| now {bseries[-1]:.3g})",
                            layer=label, metric=bseries[-1]))
            if len(snaps) == self.buffer.capacity and _frozen(snaps, label):
                out.append(Violation(
                    UNTRAINED_PARAMS,
                    f"parameters did not move over the last "
                    f"{self.buffer.capacity} snapshots",
                    layer=label))
        return out

    def _check_activations(self, snaps) -> list:
        ctx = self.ctx
        out = []
        for idx, layer in self._hidden_acts:
            label = self.labels[idx]
            kind = layer.kind
            stacked = np.vstack([s.activations[label] for s in snaps])
            latest = snaps[-1].activations[label]
            out += self._range_violation(latest, kind, label)
            if kind.name == "relu" and len(snaps) >= 2:
                p95 = np.percentile(stacked, 95, axis=0)
                frac = float((p95 < ctx.dead_value_eps).mean())
                if frac > ctx.dead_layer_ratio:
                    out.append(Violation(
                        DEAD_RELU, f"{frac:.0%} of units are inactive at the 95th "
                                   "percentile",
                        layer=label, metric=frac, threshold=ctx.dead_layer_ratio))
            if kind.bounded and kind.name != "softmax" and len(snaps) >= 2:
                rho = saturation_rho(stacked, kind.bounds, ctx.sat_bins)
                frac = float((rho > ctx.sat_rho_min).mean())
                if frac > ctx.sat_layer_ratio:
                    out.append(Violation(
                        SAT_ACT, f"{frac:.0%} of units are saturated",
                        layer=label, metric=frac, threshold=ctx.sat_layer_ratio))
            if np.all(np.isfinite(stacked)):
                sd = float(stacked.std())
                n = stacked.size
                if sd >= ctx.act_std_low:
                    # Low spread means instability only in a layer that never
                    # found a healthy operating range; a converging network
                    # sharpens its activations legitimately.
                    self._act_was_healthy.add(label)
                if sd < ctx.act_std_low and label not in self._act_was_healthy \
                        and not f_test_variance(
                            sd * sd, n, ctx.act_std_low ** 2, ctx.alpha).passed:
                    out.append(Violation(
                        UNS_ACT_LS, f"activation spread {sd:.3f} well under "
                                    f"{ctx.act_std_low}",
                        layer=label, metric=sd, threshold=ctx.act_std_low))
                elif sd > ctx.act_std_high and not f_test_variance(
                        sd * sd, n, ctx.act_std_high ** 2, ctx.alpha).passed:
                    out.append(Violation(
                        UNS_ACT_HS, f"activation spread {sd:.3f} well over "
                                    f"{ctx.act_std_high}",
                        layer=label, metric=sd, threshold=ctx.act_std_high))
        out += self._check_output(snaps[-1])
        return out

    def _range_violation(self, values, kind, label) -> list:
        lo, hi = kind.bounds
        tol = self.ctx.output_tol
        bad = not np.all(np.isfinite(values))
        if not bad and np.isfinite(lo):
            bad = values.min() < lo - tol
        if not bad and np.isfinite(hi):
            bad = bad or values.max() > hi + tol
        if bad:
            return [Violation(
                OUT_RANGE_ACT,
                f"{kind.name} produced values outside [{lo:.4g}, {hi:.4g}]",
                layer=label)]
        return []

    def _check_output(self, snap: Snapshot) -> list:
        ctx = self.ctx
        y = snap.output
        net = self.program.network
        label = self.labels[len(net.layers) - 1]
        if not np.all(np.isfinite(y)):
            return [Violation(INV_OUTS, "non-finite network outputs", layer=label)]
        if self.program.problem == "classification":
            off_range = max(float(-y.min()), float(y.max() - 1.0))
            off_sum = float(np.abs(y.sum(axis=1) - 1.0).max())
            if off_range > ctx.output_tol or off_sum > ctx.output_tol:
                return [Violation(
                    INV_OUTS,
                    f"outputs are not probabilities (range excess "
                    f"{max(off_range, 0):.4g}, row-sum deviation {off_sum:.4g})",
                    layer=label, metric=max(off_range, off_sum),
                    threshold=ctx.output_tol)]
            return []
        kind = net.output_activation()
        if kind is None:
            return []
        lo, hi = kind.bounds
        t = self.y
        if t.min() < lo - ctx.output_tol or t.max() > hi + ctx.output_tol:
            return [Violation(
                INV_OUTS,
                f"output activation range [{lo:.4g}, {hi:.4g}] cannot reach "
                f"targets in [{t.min():.4g}, {t.max():.4g}]",
                layer=label)]
        return []


def _update_log_ratio(snap: Snapshot, label: str) -> float:
    """log10 of mean |update| over mean |weight| for one dense layer."""
    delta = snap.deltas[label].get("W")
    w = snap.params[label]["W"]
    num = float(np.abs(delta).mean()) if delta is not None else 0.0
    denom = float(np.abs(w).mean())
    if denom == 0.0:
        return np.inf if num > 0.0 else -np.inf
    if num == 0.0:
        return -np.inf
    return float(np.log10(num / denom))


def _reg_ratio(snap: Snapshot, label: str) -> float:
    pen = snap.penalty_grads.get(label)
    if pen is None:
        return 0.0
    p = float(np.abs(pen).mean())
    d = float(np.abs(snap.data_grads[label]["W"]).mean())
    if d == 0.0:
        return np.inf if p > 0.0 else 0.0
    return p / d


def _frozen(snaps, label: str) -> bool:
    for prev, cur in zip(snaps, snaps[1:]):
        for name, value in cur.params[label].items():
            other = prev.params[label][name]
            if value is None or other is None:
                continue
            if not np.array_equal(value, other):
                return False
    return True
