"""Synthetic utterances, noise augmentation, feature files and manifests.

Feature file (little-endian)::

    b"FEAT" | u32 version=1 | u32 T | u32 F | T*F float32, row-major
    [ b"STAT" | u32 T | T uint32 frame states ]   # optional

Frame state ``SILENCE`` (stored as 0xFFFFFFFF) marks padding frames.

Manifest: JSON lines, a header object first and one record per line after.
Record paths are relative to the manifest's directory.
"""

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

SILENCE = -1
NEGATIVE = "NEGATIVE"

FEAT_MAGIC = b"FEAT"
STAT_MAGIC = b"STAT"
FEAT_VERSION = 1
MANIFEST_VERSION = 1
_SILENCE_U32 = 0xFFFFFFFF


class CorpusError(ValueError):
    pass


class FeatureMagicError(CorpusError):
    pass


class FeatureVersionError(CorpusError):
    pass


class FeatureTruncatedError(CorpusError):
    pass


class ManifestError(CorpusError):
    pass


@dataclass
class SynthesisProfile:
    means: np.ndarray
    stds: np.ndarray
    dur_min: int = 2
    dur_max: int = 6
    noise_std: float = 1.0
    pad_max: int = 5
    confusable: tuple = ()

    def __post_init__(self):
        if self.means.shape != self.stds.shape:
            raise CorpusError("means and stds differ in shape")
        if (self.stds <= 0).any():
            raise CorpusError("state stds must be positive")
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise CorpusError(f"bad duration range [{self.dur_min}, {self.dur_max}]")

    @property
    def feature_dim(self):
        return self.means.shape[1]


def make_profile(
    command_set,
    rng,
    feature_dim=40,
    mean_scale=1.0,
    state_std=0.5,
    noise_std=1.0,
    confusable=(),
    dur_min=2,
    dur_max=6,
):
    """Random state means; each ``(phone_a, phone_b, distance)`` in
    ``confusable`` puts every state of ``phone_b`` exactly ``distance`` away
    from the matching state of ``phone_a``."""
    S = command_set.states_per_phone
    g = rng.gen
    means = g.normal(0.0, mean_scale, size=(command_set.num_states, feature_dim))
    index = {p: i for i, p in enumerate(command_set.phones)}
    for a, b, dist in confusable:
        for k in range(S):
            u = g.normal(size=feature_dim)
            u /= np.linalg.norm(u)
            means[index[b] * S + k] = means[index[a] * S + k] + dist * u
    stds = np.full_like(means, state_std)
    return SynthesisProfile(
        means, stds, dur_min, dur_max, noise_std, 5, tuple(tuple(c) for c in confusable)
    )


def synth_utterance(states, profile, rng, noise_std=None):
    """Frames for an emission-state sequence with silence padding either side.

    Returns ``(features, frame_states)``; padding frames are labelled
    ``SILENCE``.
    """
    noise = profile.noise_std if noise_std is None else noise_std
    g = rng.gen
    F = profile.feature_dim
    lead = int(g.integers(0, profile.pad_max + 1))
    trail = int(g.integers(0, profile.pad_max + 1))
    labels = [SILENCE] * lead
    for s in states:
        labels += [int(s)] * int(g.integers(profile.dur_min, profile.dur_max + 1))
    labels += [SILENCE] * trail
    lab = np.array(labels, dtype=np.int64)
    speech = lab != SILENCE
    feats = np.zeros((len(lab), F))
    feats[speech] = profile.means[lab[speech]] + profile.stds[lab[speech]] * g.normal(
        size=(int(speech.sum()), F)
    )
    feats += noise * g.normal(size=feats.shape)
    return feats, lab


def augment_noise(features, rng, snr_db):
    """Add white gaussian noise at exactly ``snr_db`` (power = mean square).

    ``snr_db`` of ``None`` or ``+inf`` returns an unchanged copy.
    """
    x = np.asarray(features, dtype=np.float64)
    if snr_db is None or snr_db == math.inf:
        return x.copy()
    if not math.isfinite(snr_db):
        raise CorpusError(f"snr_db must be finite, got {snr_db}")
    power = float(np.mean(x * x))
    if power == 0.0:
        raise CorpusError("cannot set an SNR against a zero-power signal")
    noise = rng.gen.normal(size=x.shape)
    target = power / 10.0 ** (snr_db / 10.0)
    noise *= math.sqrt(target / float(np.mean(noise * noise)))
    return x + noise


def babble_states(command_set, rng, min_phones=2, max_phones=None):
    """Random phone sequence, expanded to states, that contains no command."""
    S = command_set.states_per_phone
    if max_phones is None:
        max_phones = max(len(c.phones) for c in command_set.commands) + 1
    commands = [c.states for c in command_set.commands]
    while True:
        n = int(rng.gen.integers(min_phones, max_phones + 1))
        phones = rng.gen.integers(0, len(command_set.phones), size=n)
        states = tuple(int(p) * S + k for p in phones for k in range(S))
        if not any(_contains(states, c) for c in commands):
            return states


def _contains(seq, sub):
    m = len(sub)
    return any(seq[i : i + m] == sub for i in range(len(seq) - m + 1))


def write_features(path, features, frame_states=None):
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[0] == 0:
        raise CorpusError(f"feature matrix must be T x F with T >= 1, got {x.shape}")
    T, F = x.shape
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<III", FEAT_VERSION, T, F))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        if frame_states is not None:
            st = np.asarray(frame_states, dtype=np.int64)
            if st.shape != (T,):
                raise CorpusError(f"{st.shape[0]} frame states for {T} frames")
            fh.write(STAT_MAGIC)
            fh.write(struct.pack("<I", T))
            fh.write(np.where(st == SILENCE, _SILENCE_U32, st).astype("<u4").tobytes())


def _take(buf, pos, n, path):
    if pos + n > len(buf):
        raise FeatureTruncatedError(f"{path}: truncated feature file")
    return buf[pos : pos + n], pos + n


def read_features(path):
    """Returns ``(features as float64, frame_states or None)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    head, pos = _take(buf, 0, 4, path)
    if head != FEAT_MAGIC:
        raise FeatureMagicError(f"{path}: bad magic {head!r}")
    raw, pos = _take(buf, pos, 12, path)
    version, T, F = struct.unpack("<III", raw)
    if version != FEAT_VERSION:
        raise FeatureVersionError(f"{path}: unsupported version {version}")
    raw, pos = _take(buf, pos, 4 * T * F, path)
    feats = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(T, F)
    states = None
    if pos < len(buf):
        tag, pos = _take(buf, pos, 4, path)
        if tag != STAT_MAGIC:
            raise FeatureMagicError(f"{path}: bad state-block magic {tag!r}")
        raw, pos = _take(buf, pos, 4, path)
        (n,) = struct.unpack("<I", raw)
        if n != T:
            raise CorpusError(f"{path}: {n} frame states for {T} frames")
        raw, pos = _take(buf, pos, 4 * n, path)
        u = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        states = np.where(u == _SILENCE_U32, SILENCE, u)
        if pos != len(buf):
            raise CorpusError(f"{path}: trailing bytes")
    return feats, states


@dataclass
class UtteranceRecord:
    utt_id: str
    path: str
    label: object
    has_states: bool = False
    snr_db: float = None

    @property
    def is_negative(self):
        return self.label == NEGATIVE


@dataclass
class Manifest:
    header: dict
    records: list = field(default_factory=list)
    root: str = "."

    def feature_path(self, rec):
        return os.path.join(self.root, rec.path)

    def load(self, rec):
        return read_features(self.feature_path(rec))


def write_manifest(path, manifest):
    ids = [r.utt_id for r in manifest.records]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate utt_id in manifest")
    header = dict(manifest.header, format="msce-manifest", version=MANIFEST_VERSION)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            rec = {"utt_id": r.utt_id, "path": r.path, "label": r.label, "has_states": r.has_states}
            if r.snr_db is not None:
                rec["snr_db"] = r.snr_db
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path, check_files=True):
    root = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest (no header)")
    header = json.loads(lines[0])
    if header.get("format") != "msce-manifest":
        raise ManifestError(f"{path}: first line is not a manifest header")
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {header.get('version')}")
    records = []
    seen = set()
    for ln in lines[1:]:
        d = json.loads(ln)
        rec = UtteranceRecord(d["utt_id"], d["path"], d["label"], d.get("has_states", False), d.get("snr_db"))
        if rec.utt_id in seen:
            raise ManifestError(f"{path}: duplicate utt_id {rec.utt_id}")
        seen.add(rec.utt_id)
        if check_files and not os.path.exists(os.path.join(root, rec.path)):
            raise ManifestError(f"{path}: missing feature file {os.path.join(root, rec.path)}")
        records.append(rec)
    return Manifest(header, records, root)


def manifest_hash(path):
    """SHA-256 prefix of the manifest text, identifying an evaluation set."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def synth_corpus(
    command_set,
    profile,
    out_dir,
    positives_per_command,
    negatives,
    seed,
    snr_db=None,
    split="train",
):
    """Write feature files and ``manifest.jsonl`` into ``out_dir``.

    Utterance ``i`` draws from its own stream keyed by ``(seed, split, i)``,
    so output is a pure function of the arguments.
    """
    os.makedirs(out_dir, exist_ok=True)
    base = Rng(seed, f"synth/{split}")
    plan = [c.id for c in command_set.commands for _ in range(positives_per_command)]
    plan += [NEGATIVE] * negatives
    records = []
    for i, label in enumerate(plan):
        rng = base.child(i)
        name = f"utt_{i:06}.feat"
        if label == NEGATIVE:
            states = babble_states(command_set, rng)
        else:
            states = command_set[label].states
        feats, lab = synth_utterance(states, profile, rng)
        if snr_db is not None:
            feats = augment_noise(feats, rng, snr_db)
        if label == NEGATIVE:
            write_features(os.path.join(out_dir, name), feats)
        else:
            write_features(os.path.join(out_dir, name), feats, lab)
        records.append(
            UtteranceRecord(f"{split}_{i:06}", name, label, label != NEGATIVE, snr_db)
        )
    header = {
        "feature_dim": profile.feature_dim,
        "phone_inventory_hash": command_set.inventory_hash(),
        "states_per_phone": command_set.states_per_phone,
        "split": split,
    }
    manifest = Manifest(header, records, out_dir)
    write_manifest(os.path.join(out_dir, "manifest.jsonl"), manifest)
    return manifest
