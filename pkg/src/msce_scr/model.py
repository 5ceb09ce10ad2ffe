"""Dilated TDNN acoustic model with a hand-written backward pass.

Each block is dilated 1-D convolution over time -> batch norm -> ReLU ->
dropout. Batch-norm statistics are taken over the frames of one utterance.
Causal blocks see only left context. A linear layer maps the last block to
``output_units`` logits (blank last).

Parameters live in an ordered ``dict`` of float64 arrays keyed by
``block{i}.conv_w``, ``block{i}.conv_b``, ``block{i}.bn_gamma``,
``block{i}.bn_beta``, ``block{i}.bn_mean``, ``block{i}.bn_var`` and finally
``out.w``, ``out.b``. That key order is also the checkpoint tensor order.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

PAPER_DILATIONS = (1, 2, 4, 4, 2, 1, 1, 2, 4, 4, 2, 1, 1, 2, 4, 4)

CHECKPOINT_MAGIC = b"MSCE"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class ModelConfig:
    output_units: int
    num_blocks: int = 16
    kernel_size: int = 3
    channels: int = 128
    dilations: tuple = PAPER_DILATIONS
    causal_blocks: tuple = (6, 7, 8, 9)
    input_dim: int = 40
    dropout_rate: float = 0.1
    bn_eps: float = 1e-5
    bn_momentum: float = 0.99

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.causal_blocks = tuple(sorted(int(b) for b in self.causal_blocks))
        if len(self.dilations) != self.num_blocks:
            raise ModelError(f"{len(self.dilations)} dilations for {self.num_blocks} blocks")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ModelError(f"kernel_size must be odd, got {self.kernel_size}")
        if any(not 0 <= b < self.num_blocks for b in self.causal_blocks):
            raise ModelError(f"causal block index outside [0, {self.num_blocks})")
        if self.output_units < 2:
            raise ModelError("need at least one emission state plus blank")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_json(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        d["causal_blocks"] = list(self.causal_blocks)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def tap_offsets(self, block):
        """Frame offsets read by each kernel tap of ``block``."""
        K, d = self.kernel_size, self.dilations[block]
        base = K - 1 if block in self.causal_blocks else (K - 1) // 2
        return [(k - base) * d for k in range(K)]

    def block_dims(self, block):
        cin = self.input_dim if block == 0 else self.channels
        return cin, self.channels


def param_names(config):
    names = []
    for i in range(config.num_blocks):
        p = f"block{i}."
        names += [p + "conv_w", p + "conv_b", p + "bn_gamma", p + "bn_beta", p + "bn_mean", p + "bn_var"]
    return names + ["out.w", "out.b"]


def trainable_names(config):
    return [n for n in param_names(config) if not n.endswith(("bn_mean", "bn_var"))]


def init_parameters(config, rng):
    """Uniform fan-based weights, zero biases, identity batch norm."""
    g = rng.gen
    params = {}
    K = config.kernel_size
    for i in range(config.num_blocks):
        cin, cout = config.block_dims(i)
        bound = np.sqrt(6.0 / (cin * K + cout * K))
        p = f"block{i}."
        params[p + "conv_w"] = g.uniform(-bound, bound, size=(cout, cin, K))
        params[p + "conv_b"] = np.zeros(cout)
        params[p + "bn_gamma"] = np.ones(cout)
        params[p + "bn_beta"] = np.zeros(cout)
        params[p + "bn_mean"] = np.zeros(cout)
        params[p + "bn_var"] = np.ones(cout)
    bound = np.sqrt(6.0 / (config.channels + config.output_units))
    params["out.w"] = g.uniform(-bound, bound, size=(config.output_units, config.channels))
    params["out.b"] = np.zeros(config.output_units)
    return params


def _shift(x, off):
    """Rows ``x[t + off]``, zero where out of range."""
    T = x.shape[0]
    out = np.zeros_like(x)
    if off >= 0:
        if off < T:
            out[: T - off] = x[off:]
    elif -off < T:
        out[-off:] = x[: T + off]
    return out


def _unshift_add(dst, g, off):
    """Adjoint of ``_shift``: ``dst[t + off] += g[t]``."""
    T = dst.shape[0]
    if off >= 0:
        if off < T:
            dst[off:] += g[: T - off]
    elif -off < T:
        dst[: T + off] += g[-off:]


@dataclass
class ForwardCache:
    config: ModelConfig
    mode: str
    inputs: np.ndarray
    cols: list = field(default_factory=list)
    xhat: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    pre_relu: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    hidden: np.ndarray = None


def forward(params, config, features, mode="infer", rng=None, update_stats=True):
    """Run the network on one utterance.

    Returns ``(logits, cache)`` with ``logits`` of shape ``T x output_units``.
    In train mode batch norm uses the utterance's frame statistics and, when
    ``update_stats``, folds them into the running averages in ``params``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ModelError(f"features must be T x {config.input_dim}, got {x.shape}")
    if x.shape[0] < 1:
        raise ModelError("empty utterance")
    if mode not in ("train", "infer"):
        raise ModelError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and config.dropout_rate > 0 and rng is None:
        raise ModelError("train mode with dropout needs an rng")
    cache = ForwardCache(config, mode, x)
    h = x
    mom, eps = config.bn_momentum, config.bn_eps
    for i in range(config.num_blocks):
        p = f"block{i}."
        W = params[p + "conv_w"]
        cout, cin, K = W.shape
        if h.shape[1] != cin:
            raise ModelError(f"block {i} expects {cin} channels, got {h.shape[1]}")
        cols = np.concatenate([_shift(h, off) for off in config.tap_offsets(i)], axis=1)
        z = cols @ W.transpose(0, 2, 1).reshape(cout, K * cin).T + params[p + "conv_b"]
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                params[p + "bn_mean"] *= mom
                params[p + "bn_mean"] += (1.0 - mom) * mu
                params[p + "bn_var"] *= mom
                params[p + "bn_var"] += (1.0 - mom) * var
        else:
            mu = params[p + "bn_mean"]
            var = params[p + "bn_var"]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        y = params[p + "bn_gamma"] * xhat + params[p + "bn_beta"]
        h = np.maximum(y, 0.0)
        mask = None
        if train and config.dropout_rate > 0:
            keep = 1.0 - config.dropout_rate
            mask = (rng.gen.random(h.shape) < keep) / keep
            h = h * mask
        cache.cols.append(cols)
        cache.xhat.append(xhat)
        cache.inv_std.append(inv_std)
        cache.pre_relu.append(y)
        cache.masks.append(mask)
    cache.hidden = h
    logits = h @ params["out.w"].T + params["out.b"]
    return logits, cache


def backward(params, config, cache, grad_logits, want_input=False):
    """Gradients of a scalar with logit gradient ``grad_logits``.

    Returns a dict over ``trainable_names(config)``, plus ``"input"`` when
    ``want_input``.
    """
    if cache.config != config:
        raise ModelError("cache was produced under a different config")
    G = np.asarray(grad_logits, dtype=np.float64)
    if G.shape != (cache.inputs.shape[0], config.output_units):
        raise ModelError(f"grad_logits shape {G.shape} does not match forward output")
    grads = {}
    grads["out.w"] = G.T @ cache.hidden
    grads["out.b"] = G.sum(axis=0)
    dh = G @ params["out.w"]
    train = cache.mode == "train"
    T = G.shape[0]
    for i in reversed(range(config.num_blocks)):
        p = f"block{i}."
        if cache.masks[i] is not None:
            dh = dh * cache.masks[i]
        dy = dh * (cache.pre_relu[i] > 0)
        xhat = cache.xhat[i]
        grads[p + "bn_gamma"] = (dy * xhat).sum(axis=0)
        grads[p + "bn_beta"] = dy.sum(axis=0)
        dxhat = dy * params[p + "bn_gamma"]
        inv_std = cache.inv_std[i]
        if train:
            dz = inv_std / T * (T * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dz = dxhat * inv_std
        W = params[p + "conv_w"]
        cout, cin, K = W.shape
        Wm = W.transpose(0, 2, 1).reshape(cout, K * cin)
        grads[p + "conv_w"] = (dz.T @ cache.cols[i]).reshape(cout, K, cin).transpose(0, 2, 1)
        grads[p + "conv_b"] = dz.sum(axis=0)
        if i == 0 and not want_input:
            break
        dcols = dz @ Wm
        dh = np.zeros((T, cin))
        for k, off in enumerate(config.tap_offsets(i)):
            _unshift_add(dh, dcols[:, k * cin : (k + 1) * cin], off)
    out = {n: grads[n] for n in trainable_names(config)}
    if want_input:
        out["input"] = dh
    return out


def receptive_field(config):
    """Frames of (left, right) context seen by one output frame."""
    K = config.kernel_size
    left = right = 0
    for i, d in enumerate(config.dilations):
        if i in config.causal_blocks:
            left += d * (K - 1)
        else:
            left += d * (K - 1) // 2
            right += d * (K - 1) // 2
    return left, right


def flatten(params, names):
    return np.concatenate([params[n].ravel() for n in names])


def unflatten(vec, like, names):
    out = {}
    pos = 0
    for n in names:
        size = like[n].size
        out[n] = vec[pos : pos + size].reshape(like[n].shape).copy()
        pos += size
    return out


def save_checkpoint(params, config, path):
    """Write the little-endian checkpoint; tensors are stored as float32."""
    blob = config.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name in param_names(config):
            arr = np.asarray(params[name], dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointMagicError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"{path}: unsupported version {version}")
        (n,) = struct.unpack("<Q", _read(fh, 8, "config length"))
        config = ModelConfig.from_json(_read(fh, n, "config").decode("utf-8"))
        params = {}
        for name in param_names(config):
            (rank,) = struct.unpack("<I", _read(fh, 4, name))
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, name))
            count = int(np.prod(shape)) if rank else 1
            raw = _read(fh, 4 * count, name)
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return params, config


def average_parameters(checkpoints):
    """Element-wise mean of ``(params, config)`` pairs sharing one config."""
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ModelError("nothing to average")
    config = checkpoints[0][1]
    for _, c in checkpoints[1:]:
        if c != config:
            raise ModelError("cannot average checkpoints with different configs")
    n = len(checkpoints)
    return {
        name: sum(p[name] for p, _ in checkpoints) / n for name in param_names(config)
    }
