"""Streaming token-passing Viterbi decoder over a DecodingGraph.

Two token lists are allocated once per decoder and reused every frame.
Instead of back-pointers, each token carries a fixed-length array of the
emission states it has entered (sized to the longest command), so a
triggered command is read straight off the token.

Scores are log-posteriors, higher is better. A token on a final node
triggers when its accumulated score divided by the number of states on the
path reaches ``trigger_threshold``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import forward
from .numerics import softmax_log


class DecoderError(ValueError):
    pass


@dataclass
class DecoderConfig:
    beam: float = 12.0
    trigger_threshold: float = -1.0
    blank_absorb: bool = True
    max_tokens: int = 2000

    def __post_init__(self):
        if not self.beam > 0:
            raise DecoderError(f"beam must be positive, got {self.beam}")
        if self.max_tokens < 1:
            raise DecoderError("max_tokens must be at least 1")


@dataclass(frozen=True)
class Token:
    node: int
    acc_log_score: float
    states_entered: int
    output: tuple


@dataclass(frozen=True)
class TriggerEvent:
    command: int
    score: float
    end_frame: int
    states_path: tuple


class Decoder:
    def __init__(self, graph, config=None, blank=None, backend=None):
        self.graph = graph
        self.config = config or DecoderConfig()
        # None: blank is the last unit of each frame
        self.blank = blank
        self._impl = kernels.get_backend(backend)
        n = len(graph)
        width = max(graph.max_command_states, 1)
        self._cur_node = np.zeros(n, dtype=np.int64)
        self._cur_score = np.zeros(n)
        self._cur_out = np.full((n, width), -1, dtype=np.int64)
        self._nxt_node = np.zeros(n, dtype=np.int64)
        self._nxt_score = np.zeros(n)
        self._nxt_out = np.full((n, width), -1, dtype=np.int64)
        self._slot = np.full(n, -1, dtype=np.int64)
        self._keep = np.zeros(n, dtype=np.int64)
        self.reset()

    def reset(self):
        self._cur_node[0] = 0
        self._cur_score[0] = 0.0
        self._cur_out[0, :] = -1
        self._n = 1
        self.frame = 0
        self.best_final = None

    @property
    def num_tokens(self):
        return self._n

    def tokens(self):
        out = []
        for k in range(self._n):
            node = int(self._cur_node[k])
            d = int(self.graph.depth[node])
            out.append(Token(node, float(self._cur_score[k]), d, tuple(self._cur_out[k, :d].tolist())))
        return out

    def step(self, frame_log_posteriors):
        """Consume one frame; return a TriggerEvent or ``None``."""
        lp = np.ascontiguousarray(frame_log_posteriors, dtype=np.float64)
        blank = lp.shape[0] - 1 if self.blank is None else self.blank
        if lp.ndim != 1 or blank <= self.graph.emit.max() or blank >= lp.shape[0]:
            raise DecoderError(
                f"frame of shape {lp.shape} does not cover the graph's "
                f"{int(self.graph.emit.max()) + 1} emission states plus blank"
            )
        cfg = self.config
        g = self.graph
        max_tokens = min(cfg.max_tokens, len(g)) if math.isfinite(cfg.max_tokens) else len(g)
        n, cmd, avg, slot = self._impl.decode_step(
            lp, blank, bool(cfg.blank_absorb), float(cfg.beam), int(max_tokens),
            g.emit, g.child_ptr, g.child_idx, g.depth, g.final_cmd,
            self._cur_node, self._cur_score, self._cur_out, self._n,
            self._nxt_node, self._nxt_score, self._nxt_out, self._slot, self._keep,
        )
        self._n = n
        self.frame += 1
        self.best_final = (cmd, avg) if cmd >= 0 else None
        if cmd >= 0 and avg >= cfg.trigger_threshold:
            d = int(g.depth[self._cur_node[slot]])
            path = tuple(self._cur_out[slot, :d].tolist())
            end = self.frame
            self.reset()
            self.frame = end
            return TriggerEvent(int(cmd), float(avg), end, path)
        return None


def decode_utterance(decoder, log_posteriors):
    """All trigger events over a ``T x U`` log-posterior matrix."""
    events = []
    for row in np.asarray(log_posteriors, dtype=np.float64):
        ev = decoder.step(row)
        if ev is not None:
            events.append(ev)
    return events


def trigger_ladder(graph, config, log_posteriors, blank=None, backend=None):
    """Record-breaking best-final scores from one never-triggering pass.

    Returns ``[(score, command, end_frame), ...]`` with strictly increasing
    scores. Pruning does not depend on the threshold, so a decoder run at
    threshold ``theta`` first triggers exactly at the first rung with
    ``score >= theta``.
    """
    quiet = DecoderConfig(config.beam, math.inf, config.blank_absorb, config.max_tokens)
    dec = Decoder(graph, quiet, blank, backend)
    ladder = []
    best = -math.inf
    for t, row in enumerate(np.asarray(log_posteriors, dtype=np.float64)):
        dec.step(row)
        if dec.best_final is not None:
            cmd, avg = dec.best_final
            if avg > best:
                best = avg
                ladder.append((float(avg), int(cmd), t + 1))
    return ladder


def first_trigger(ladder, threshold):
    """The rung a decoder at ``threshold`` would fire on, or ``None``."""
    for rung in ladder:
        if rung[0] >= threshold:
            return rung
    return None


def model_log_posteriors(params, model_config, features):
    logits, _ = forward(params, model_config, features, mode="infer")
    return softmax_log(logits)

