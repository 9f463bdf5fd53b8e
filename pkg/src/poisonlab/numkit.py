"""Dense float64 kernels and deterministic, stream-addressed randomness.

Everything downstream standardizes on C-order float64 arrays and on RngState
for any randomness, so whole experiment sweeps replay bit-identically. Named
streams keep independent concerns (data generation, model init, attack row
selection) from consuming each other's draws:

    STREAM_DATA     dataset generation
    STREAM_PRETRAIN encoder initialization
    STREAM_BATCH    minibatch shuffling
    STREAM_DECODER  decoder initialization
    STREAM_ATTACK   attack-side randomness (base row selection, noise init)
"""

import numpy as np

STREAM_DATA = 0
STREAM_PRETRAIN = 1
STREAM_BATCH = 2
STREAM_DECODER = 3
STREAM_ATTACK = 7


class RngState:
    """Deterministic random stream addressed by (seed, stream).

    The same (seed, stream) pair replays the same sample sequence on every
    platform (PCG64 under a SeedSequence). split() derives a child stream
    whose draws never overlap this one's.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.default_rng(self._seq)

    def split(self):
        child = object.__new__(RngState)
        child.seed = self.seed
        child.stream = self.stream
        child._seq = self._seq.spawn(1)[0]
        child._gen = np.random.default_rng(child._seq)
        return child

    # thin delegation; every consumer draws through these so call sites stay greppable
    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self, lo, hi, shape):
        return self._gen.uniform(lo, hi, shape)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngState(seed={self.seed}, stream={self.stream})"


def as_matrix(x):
    """Coerce to a C-order float64 2-D array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(logits):
    """Row-wise softmax with per-row max subtraction; rows sum to 1."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def clip_box(x, lo, hi):
    """Entrywise clip to [lo, hi]; bounds may be scalars or per-column arrays."""
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError(f"clip_box bounds inverted: lo={lo} > hi={hi}")
    return np.clip(x, lo, hi)


def prox_avg(v, anchor, eta, beta):
    """Proximal pull of v toward anchor.

    Exact minimizer of 0.5*||u - v||^2 + (eta*beta/2)*||u - anchor||^2:
    (v + eta*beta*anchor) / (1 + eta*beta). Entrywise a convex combination
    of v and anchor.
    """
    if v.shape != anchor.shape:
        raise ValueError(f"prox_avg shape mismatch: {v.shape} vs {anchor.shape}")
    return (v + eta * beta * anchor) / (1.0 + eta * beta)


def norms(x):
    """(Frobenius norm, max absolute entry)."""
    l2 = float(np.sqrt(np.sum(x * x)))
    linf = float(np.max(np.abs(x))) if x.size else 0.0
    return l2, linf


def sample_gaussian(rng, rows, cols, mean=0.0, std=1.0):
    if std < 0:
        raise ValueError("std must be nonnegative")
    return mean + std * rng.standard_normal((rows, cols))


def sample_uniform(rng, rows, cols, lo=0.0, hi=1.0):
    if lo > hi:
        raise ValueError("uniform bounds inverted")
    return rng.uniform(lo, hi, (rows, cols))
