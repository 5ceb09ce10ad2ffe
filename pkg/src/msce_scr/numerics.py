"""Log-domain helpers, seeded random streams and a finite-difference checker.

Everything here is float64. ``NEG_INF`` is a finite sentinel rather than
``-inf`` so that sums of log-zero terms never produce NaN.
"""

import math
import zlib

import numpy as np

NEG_INF = -1.0e30
"""Log-zero sentinel. Anything at or below it is treated as probability 0."""


class ContractError(ValueError):
    """A precondition of a numerical routine was violated."""


def log_sum_exp(values):
    """Return ``log(sum(exp(values)))`` using the max-shift trick."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractError("log_sum_exp of an empty sequence")
    if np.isnan(v).any():
        raise ContractError("log_sum_exp input contains NaN")
    m = v.max()
    if m <= NEG_INF:
        return NEG_INF
    return float(m + math.log(np.exp(v - m).sum()))


def log_add(a, b):
    """Two-term log-sum-exp on Python floats, ``NEG_INF`` absorbing."""
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def softmax_log(logits):
    """Row-wise log-softmax. Accepts a vector or a 2-D array of rows."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ContractError("softmax_log requires finite logits")
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def finite_diff_check(f, analytic_grad, point, step=1e-5, indices=None):
    """Compare ``analytic_grad`` with central differences of ``f`` at ``point``.

    ``indices`` restricts the check to a subset of flat coordinates (used for
    large parameter vectors). Returns the maximum over checked coordinates of
    ``|g_fd - g_an| / max(1e-8, |g_fd| + |g_an|)``.
    """
    x = np.array(point, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != x.shape:
        raise ContractError(f"gradient has {g.size} entries, point has {x.size}")
    coords = range(x.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        orig = x[i]
        x[i] = orig + step
        fp = float(f(x.copy()))
        x[i] = orig - step
        fm = float(f(x.copy()))
        x[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ContractError(f"non-finite function value at coordinate {i}")
        fd = (fp - fm) / (2.0 * step)
        err = abs(fd - g[i]) / max(1e-8, abs(fd) + abs(g[i]))
        worst = max(worst, err)
    return worst


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator seeded through ``SeedSequence``
    with ``spawn_key=(stream,)``, so ``(seed, stream)`` pairs give independent,
    platform-stable streams. Named streams hash the name with CRC-32.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = stream_index(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream):
        """A new stream keyed by ``(seed, self.stream, stream)``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, stream_index(stream)))
        out = Rng.__new__(Rng)
        out.seed = self.seed
        out.stream = self.stream
        out.gen = np.random.Generator(np.random.PCG64(ss))
        return out

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def stream_index(stream):
    if isinstance(stream, str):
        return zlib.crc32(stream.encode("utf-8"))
    return int(stream)
