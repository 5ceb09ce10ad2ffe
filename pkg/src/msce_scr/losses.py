"""Frame cross-entropy, CTC, and the MSCE sequence-confusion loss.

Every loss takes a ``T x U`` matrix of per-frame log-posteriors (rows of
``softmax_log`` output, blank = last unit) and returns gradients with respect
to the pre-softmax logits.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .numerics import NEG_INF

log = logging.getLogger(__name__)

DENOM_EPS = 1e-8


class LossError(ValueError):
    pass


class CtcInfeasibleError(LossError):
    """The label cannot be aligned to the available frames."""


@dataclass
class MsceLossConfig:
    xi: float = 1.0
    alpha_shift: float = 0.0
    beta_mix: float = 0.8

    def __post_init__(self):
        if not self.xi > 0:
            raise LossError(f"xi must be positive, got {self.xi}")
        if not 0.0 <= self.beta_mix <= 1.0:
            raise LossError(f"beta_mix must lie in [0, 1], got {self.beta_mix}")


@dataclass
class CtcTrellis:
    label: np.ndarray
    ext: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def frame_totals(self, log_posteriors):
        """``log sum_s alpha_t(s) beta_t(s) / y_t(ext_s)`` for each frame."""
        lp = log_posteriors[:, self.ext]
        g = self.alpha + self.beta - lp
        g = np.where((self.alpha > NEG_INF) & (self.beta > NEG_INF), g, -np.inf)
        m = g.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(g - m).sum(axis=1, keepdims=True))).ravel()


@dataclass
class CtcResult:
    nll: float
    grad_logits: np.ndarray
    trellis: CtcTrellis = field(repr=False, default=None)


def ce_frame_loss(log_posteriors, frame_labels):
    """Mean frame negative log-posterior and its logit gradient."""
    lp = np.asarray(log_posteriors, dtype=np.float64)
    labels = np.asarray(frame_labels, dtype=np.int64)
    T, U = lp.shape
    if labels.shape != (T,):
        raise LossError(f"expected {T} frame labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= U):
        raise LossError(f"frame label outside [0, {U})")
    rows = np.arange(T)
    loss = -lp[rows, labels].mean()
    grad = np.exp(lp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / T


def blank_augment(label, blank):
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def min_frames(label):
    """Fewest frames that can carry ``label``: one per symbol plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(a == b for a, b in zip(label, label[1:]))


def ctc_loss(log_posteriors, label, backend=None):
    """CTC negative log-likelihood of ``label`` via forward-backward."""
    lp = np.ascontiguousarray(log_posteriors, dtype=np.float64)
    T, U = lp.shape
    blank = U - 1
    label = np.asarray(label, dtype=np.int64)
    if label.size and (label.min() < 0 or label.max() >= blank):
        raise LossError(f"label unit outside [0, {blank})")
    need = min_frames(label)
    if T < need:
        raise CtcInfeasibleError(f"label needs {need} frames, utterance has {T}")
    ext = blank_augment(label, blank)
    impl = kernels.get_backend(backend)
    ll, alpha, beta, occ = impl.ctc_forward_backward(lp, ext, blank)
    if ll <= NEG_INF:
        raise CtcInfeasibleError("no alignment has non-zero probability")
    grad = np.exp(lp) - occ
    return CtcResult(-ll, grad, CtcTrellis(label, ext, alpha, beta))


def msce_measure(nll_target, nll_confusers):
    """Ratio of target to summed confuser CTC losses, with its partials.

    Returns ``(d, dd_dtarget, dd_dconfusers)``.
    """
    conf = np.asarray(nll_confusers, dtype=np.float64)
    if conf.size == 0:
        raise LossError("confuser set is empty")
    if not (np.isfinite(conf).all() and np.isfinite(nll_target)):
        raise LossError("non-finite loss in measure")
    denom = conf.sum()
    if denom <= DENOM_EPS:
        raise LossError(f"degenerate measure denominator {denom:g}")
    d = nll_target / denom
    return float(d), 1.0 / denom, np.full(conf.shape, -nll_target / denom**2)


def msce_sigmoid_loss(d, config):
    """Smoothed zero-one loss of the measure; returns ``(loss, dloss_dd)``."""
    z = config.xi * (d + config.alpha_shift)
    if z >= 0:
        loss = 1.0 / (1.0 + np.exp(-z))
    else:
        e = np.exp(z)
        loss = e / (1.0 + e)
    return float(loss), float(config.xi * loss * (1.0 - loss))


def combined_loss(msce_loss, ce_loss, config):
    b = config.beta_mix
    return b * msce_loss + (1.0 - b) * ce_loss


@dataclass
class MsceStats:
    d: float = float("nan")
    nll_target: float = float("nan")
    dropped: int = 0
    fallback: bool = False


def msce_example_loss(log_posteriors, target, confusers, config, frame_labels=None, backend=None):
    """MSCE loss for one utterance, optionally mixed with frame CE.

    ``target`` and each entry of ``confusers`` are emission-state sequences.
    Confusers that cannot be aligned to this utterance are dropped; when none
    remain the target CTC loss is used in place of the MSCE term.

    Returns ``(loss, grad_logits, MsceStats)``.
    """
    lp = np.asarray(log_posteriors, dtype=np.float64)
    stats = MsceStats()
    tgt = ctc_loss(lp, target, backend)
    stats.nll_target = tgt.nll
    kept = []
    for states in confusers:
        try:
            kept.append(ctc_loss(lp, states, backend))
        except CtcInfeasibleError:
            stats.dropped += 1
    if kept:
        d, dd_t, dd_c = msce_measure(tgt.nll, [r.nll for r in kept])
        loss, dl_dd = msce_sigmoid_loss(d, config)
        grad = (dl_dd * dd_t) * tgt.grad_logits
        for r, w in zip(kept, dd_c):
            grad += (dl_dd * w) * r.grad_logits
        stats.d = d
    else:
        stats.fallback = True
        loss, grad = tgt.nll, tgt.grad_logits.copy()
    if frame_labels is not None:
        ce, ce_grad = ce_frame_loss(lp, frame_labels)
        b = config.beta_mix
        loss = combined_loss(loss, ce, config)
        grad = b * grad + (1.0 - b) * ce_grad
    return loss, grad, stats
