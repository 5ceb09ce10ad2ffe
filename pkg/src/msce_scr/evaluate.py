"""FRR / FAR / confusion metrics and threshold sweeps.

Each utterance is decoded once with triggering disabled. The best-scoring
final-state hypothesis over the utterance is its candidate decision, and a
threshold ``theta`` accepts it when ``score >= theta``. Re-thresholding is
therefore exact, and FAR / FRR move monotonically along a sweep.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import NEGATIVE
from .decoder import model_log_posteriors, trigger_ladder

REJECT = "REJECT"


class EvalError(ValueError):
    pass


@dataclass
class Outcome:
    utt_id: str
    truth: object
    decoded: object
    score: float
    candidate: object = None
    ladder: list = field(default_factory=list, repr=False)

    def at(self, threshold):
        """Decoded label under ``threshold``."""
        if self.candidate is None or self.score < threshold:
            return REJECT
        return self.candidate


def outcome_from_ladder(utt_id, truth, ladder, threshold):
    if ladder:
        score, cmd, _ = ladder[-1]
    else:
        score, cmd = -math.inf, None
    o = Outcome(utt_id, truth, REJECT, score, cmd, ladder)
    o.decoded = o.at(threshold)
    return o


def score_dataset(params, model_config, graph, manifest, decoder_config):
    """One Outcome per manifest record, in manifest order."""
    outcomes = []
    for rec in manifest.records:
        feats, _ = manifest.load(rec)
        lp = model_log_posteriors(params, model_config, feats)
        ladder = trigger_ladder(graph, decoder_config, lp)
        outcomes.append(outcome_from_ladder(rec.utt_id, rec.label, ladder, decoder_config.trigger_threshold))
    return outcomes


@dataclass
class MetricsReport:
    threshold: float
    positives: int
    negatives: int
    rejects: int
    confusions: int
    correct: int
    false_alarms: int
    frr: float
    far: float
    confusion_matrix: list

    def to_dict(self):
        d = asdict(self)
        if not math.isfinite(d["threshold"]):
            d["threshold"] = None
        return d


def compute_metrics(outcomes, num_commands, threshold=None):
    """Metrics at ``threshold`` (default: each outcome's recorded decision).

    Rates with an empty denominator are ``None`` rather than 0.
    ``confusion_matrix[truth][decoded]`` has a final column for rejects.
    """
    matrix = np.zeros((num_commands, num_commands + 1), dtype=np.int64)
    pos = neg = rej = conf = ok = fa = 0
    for o in outcomes:
        dec = o.decoded if threshold is None else o.at(threshold)
        if o.truth == NEGATIVE:
            neg += 1
            fa += dec != REJECT
            continue
        pos += 1
        col = num_commands if dec == REJECT else dec
        matrix[o.truth, col] += 1
        if dec == REJECT:
            rej += 1
        elif dec == o.truth:
            ok += 1
        else:
            conf += 1
    return MetricsReport(
        threshold=math.nan if threshold is None else float(threshold),
        positives=pos,
        negatives=neg,
        rejects=rej,
        confusions=conf,
        correct=ok,
        false_alarms=fa,
        frr=(rej + conf) / pos if pos else None,
        far=fa / neg if neg else None,
        confusion_matrix=matrix.tolist(),
    )


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    frr: float
    confusions: int


def roc_sweep(outcomes, thresholds, num_commands):
    ths = [float(t) for t in thresholds]
    if any(b > a for a, b in zip(ths, ths[1:])):
        raise EvalError("thresholds must be sorted in descending order")
    out = []
    for t in ths:
        m = compute_metrics(outcomes, num_commands, t)
        out.append(RocPoint(t, m.far, m.frr, m.confusions))
    return out


def default_thresholds(outcomes, steps=50):
    """Descending grid spanning the recorded candidate scores."""
    scores = [o.score for o in outcomes if math.isfinite(o.score)]
    if not scores:
        return [0.0, -1.0]
    hi, lo = max(scores) + 1e-6, min(scores) - 1e-6
    return list(np.linspace(hi, lo, steps))


def nearest_far(points, target):
    """Sweep row whose FAR is closest to ``target`` (ties: first row)."""
    rows = [p for p in points if p.far is not None]
    if not rows:
        raise EvalError("sweep has no FAR values (no negatives)")
    return min(rows, key=lambda p: abs(p.far - target))


def relative_gain(baseline, candidate, field_name=None):
    """``100 * (baseline - candidate) / baseline`` on a metric value or report field."""
    b = getattr(baseline, field_name) if field_name else baseline
    c = getattr(candidate, field_name) if field_name else candidate
    if b is None or c is None or b <= 0:
        raise EvalError(f"relative gain undefined for baseline {b!r}")
    return 100.0 * (b - c) / b


def write_report(path, report, extra=None):
    d = report.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_roc_csv(path, points):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "far", "frr", "confusions"])
        for p in points:
            w.writerow([repr(p.threshold), _fmt(p.far), _fmt(p.frr), p.confusions])


def read_roc_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        RocPoint(float(r["threshold"]), _parse(r["far"]), _parse(r["frr"]), int(r["confusions"]))
        for r in rows
    ]


def write_confusion_csv(path, report, command_names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth"] + list(command_names) + [REJECT])
        for name, row in zip(command_names, report.confusion_matrix):
            w.writerow([name] + list(row))


def _fmt(v):
    return "" if v is None else repr(float(v))


def _parse(s):
    return None if s == "" else float(s)
