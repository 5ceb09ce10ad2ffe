"""Two-stage training: frame CE pretraining, then MSCE fine-tuning.

One utterance per forward pass; ``batch_size`` utterance gradients are summed
in manifest-shuffle order, averaged, and applied with Adam. All randomness
comes from named streams of the run seed.
"""

import json
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import lexicon as lx
from . import model as M
from .corpus import NEGATIVE, SILENCE
from .losses import (
    CtcInfeasibleError,
    MsceLossConfig,
    ce_frame_loss,
    msce_example_loss,
)
from .numerics import Rng, softmax_log

log = logging.getLogger(__name__)

STRATEGIES = ("PSS", "RSS", "HS")


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "ce"
    epochs: int = 5
    learning_rate: float = None
    batch_size: int = 16
    strategy: str = "HS"
    n_confusers: int = 4
    beta_mix: float = 0.8
    xi: float = 1.0
    alpha_shift: float = 0.0
    seed: int = 0
    checkpoint_every: int = 1
    average_last_k: int = 3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in ("ce", "msce"):
            raise TrainError(f"unknown stage {self.stage!r}")
        if self.learning_rate is None:
            self.learning_rate = 1e-3 if self.stage == "ce" else 1e-4
        if not self.learning_rate > 0:
            raise TrainError("learning_rate must be positive")
        if self.strategy not in STRATEGIES:
            raise TrainError(f"strategy must be one of {STRATEGIES}")
        if self.epochs < 1 or self.batch_size < 1 or self.average_last_k < 1:
            raise TrainError("epochs, batch_size and average_last_k must be >= 1")


class Adam:
    def __init__(self, params, names, lr, betas=(0.9, 0.999), eps=1e-8):
        self.names = names
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in names}
        self.v = {n: np.zeros_like(params[n]) for n in names}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * g * g
            params[n] -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def ce_targets(frame_states, T, blank):
    if frame_states is None:
        return np.full(T, blank, dtype=np.int64)
    return np.where(frame_states == SILENCE, blank, frame_states)


def load_examples(manifest):
    """Features, CE targets and labels for every record, in manifest order."""
    out = []
    for rec in manifest.records:
        feats, states = manifest.load(rec)
        if rec.label != NEGATIVE and states is None:
            raise TrainError(f"{rec.utt_id}: positive utterance without frame states")
        out.append((rec.utt_id, feats, states, rec.label))
    return out


class ConfuserSampler:
    def __init__(self, command_set, cfg):
        self.cs = command_set
        self.cfg = cfg
        self.rng = Rng(cfg.seed, "confusers")
        self.pss = lx.build_pss_sets(command_set, cfg.n_confusers)

    def __call__(self, target):
        n = self.cfg.n_confusers
        if self.cfg.strategy == "PSS":
            return list(self.pss[target])
        if self.cfg.strategy == "RSS":
            return lx.sample_rss(self.cs, target, n, self.rng)
        return lx.sample_hs(self.cs, target, n, self.pss[target], self.rng)


def train(manifest, command_set, cfg, out_dir, model_config=None, init=None, log_path=None):
    """Run one training stage; returns ``(params, model_config, final_path)``.

    ``init`` is ``(params, model_config)`` to start from; the MSCE stage
    requires it. Without it a fresh model is built from ``model_config``.
    """
    if cfg.stage == "msce" and init is None:
        raise TrainError("the msce stage needs an initial checkpoint")
    if init is not None:
        params, mcfg = init
        params = {k: v.copy() for k, v in params.items()}
    else:
        if model_config is None:
            raise TrainError("need a model config or an initial checkpoint")
        mcfg = model_config
        params = M.init_parameters(mcfg, Rng(cfg.seed, "init"))
    if mcfg.output_units != command_set.output_units:
        raise TrainError(
            f"model has {mcfg.output_units} outputs, command set needs {command_set.output_units}"
        )
    blank = command_set.blank
    os.makedirs(out_dir, exist_ok=True)
    examples = load_examples(manifest)
    names = M.trainable_names(mcfg)
    opt = Adam(params, names, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    loss_cfg = MsceLossConfig(cfg.xi, cfg.alpha_shift, cfg.beta_mix)
    sampler = ConfuserSampler(command_set, cfg) if cfg.stage == "msce" else None
    shuffle = Rng(cfg.seed, f"shuffle/{cfg.stage}")
    dropout = Rng(cfg.seed, f"dropout/{cfg.stage}")
    logf = open(log_path, "a", encoding="utf-8") if log_path else None
    saved = []
    step = 0
    t0 = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            order = shuffle.gen.permutation(len(examples))
            epoch_loss = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                acc = {n: np.zeros_like(params[n]) for n in names}
                stats = {"ce": [], "msce": [], "d": [], "dropped": 0, "skipped": 0, "fallback": 0}
                used = 0
                for idx in batch:
                    _, feats, states, label = examples[idx]
                    logits, cache = M.forward(params, mcfg, feats, "train", dropout)
                    lp = softmax_log(logits)
                    targets = ce_targets(states, len(feats), blank)
                    if cfg.stage == "ce":
                        loss, grad = ce_frame_loss(lp, targets)
                        stats["ce"].append(loss)
                    elif label == NEGATIVE:
                        ce, g = ce_frame_loss(lp, targets)
                        loss, grad = (1.0 - cfg.beta_mix) * ce, (1.0 - cfg.beta_mix) * g
                        stats["ce"].append(ce)
                    else:
                        confusers = [command_set[c].states for c in sampler(label)]
                        try:
                            loss, grad, st = msce_example_loss(
                                lp, command_set[label].states, confusers, loss_cfg, targets
                            )
                        except CtcInfeasibleError:
                            stats["skipped"] += 1
                            continue
                        stats["msce"].append(loss)
                        stats["dropped"] += st.dropped
                        stats["fallback"] += st.fallback
                        if not st.fallback:
                            stats["d"].append(st.d)
                    g = M.backward(params, mcfg, cache, grad)
                    for n in names:
                        acc[n] += g[n]
                    used += 1
                    epoch_loss.append(loss)
                if used:
                    for n in names:
                        acc[n] /= used
                    opt.step(params, acc)
                step += 1
                if logf:
                    rec = {
                        "step": step,
                        "epoch": epoch,
                        "stage": cfg.stage,
                        "ce": _mean(stats["ce"]),
                        "msce": _mean(stats["msce"]),
                        "d_mean": _mean(stats["d"]),
                        "dropped_confusers": stats["dropped"],
                        "skipped": stats["skipped"],
                        "fallback": stats["fallback"],
                        "wall": round(time.perf_counter() - t0, 3),
                    }
                    logf.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("%s epoch %d mean loss %.5f", cfg.stage, epoch, _mean(epoch_loss))
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                path = os.path.join(out_dir, f"{cfg.stage}_epoch{epoch + 1:03}.ckpt")
                M.save_checkpoint(params, mcfg, path)
                saved.append(path)
    finally:
        if logf:
            logf.close()
    last = [M.load_checkpoint(p) for p in saved[-cfg.average_last_k :]]
    avg = M.average_parameters(last)
    final = os.path.join(out_dir, f"{cfg.stage}_final.ckpt")
    M.save_checkpoint(avg, mcfg, final)
    params, mcfg = M.load_checkpoint(final)
    return params, mcfg, final


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def train_config_dict(cfg):
    d = asdict(cfg)
    d["adam_betas"] = list(cfg.adam_betas)
    return d
