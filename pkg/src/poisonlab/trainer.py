"""Gradient-descent training loops for heads, encoders, and decoders.

Everything here is deliberately plain full-batch (or sliced minibatch) GD
with an optional cosine schedule; no momentum, no adaptivity. Reruns with
the same config are bit-identical, which the rest of the package relies on.
"""

from dataclasses import dataclass

import numpy as np

from .model import Encoder, FeatureData, LinearHead, encode, mlp_backward, mlp_forward
from .numkit import STREAM_BATCH, STREAM_DECODER, STREAM_PRETRAIN, RngState, softmax_rows


class TrainingError(RuntimeError):
    """Raised when a training loop encounters a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.1
    schedule: str = "cosine"
    batch: int = 0  # 0 = full batch
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.batch < 0:
            raise ValueError("batch must be >= 0")


def cosine_lr(lr, e, epochs):
    return lr * 0.5 * (1.0 + np.cos(np.pi * e / epochs))


def lr_at(cfg, e):
    if cfg.schedule == "cosine":
        return cosine_lr(cfg.lr, e, cfg.epochs)
    return cfg.lr


def init_mlp(dims, rng):
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, W then b per layer."""
    weights, biases = [], []
    for i in range(len(dims) - 1):
        s = 1.0 / np.sqrt(dims[i])
        weights.append(rng.uniform(-s, s, (dims[i], dims[i + 1])))
        biases.append(rng.uniform(-s, s, dims[i + 1]))
    return weights, biases


def _check_finite_logits(L, epoch):
    # finite logits <=> finite cross-entropy for softmax regression
    if not np.isfinite(L).all():
        raise TrainingError(f"non-finite training loss at epoch {epoch}")


def train_head_features(data, cfg, n_classes=None):
    """Softmax regression from zero init by (mini)batch gradient descent."""
    if cfg.epochs <= 0:
        raise ValueError("epochs must be positive")
    Z, y = data.Z, data.y
    n, p = Z.shape
    c = int(y.max()) + 1 if n_classes is None else int(n_classes)
    Y = np.eye(c)[y]
    W = np.zeros((c, p))
    b = np.zeros(c)
    bsz = cfg.batch if 0 < cfg.batch < n else 0
    rng = RngState(cfg.seed, STREAM_BATCH) if bsz else None
    for e in range(cfg.epochs):
        step = lr_at(cfg, e)
        if bsz == 0:
            L = Z @ W.T + b
            _check_finite_logits(L, e)
            P = softmax_rows(L)
            W -= step * (P - Y).T @ Z / n
            b -= step * (P - Y).sum(0) / n
        else:
            order = rng.permutation(n)
            for start in range(0, n, bsz):
                sel = order[start:start + bsz]
                Zb, Yb = Z[sel], Y[sel]
                nb = len(sel)
                L = Zb @ W.T + b
                _check_finite_logits(L, e)
                P = softmax_rows(L)
                W -= step * (P - Yb).T @ Zb / nb
                b -= step * (P - Yb).sum(0) / nb
    return LinearHead(W, b)


def train_head(f, data, cfg, n_classes=None):
    """Encode through the frozen f, then fit a head on the features."""
    Z = encode(f, data.X)
    return train_head_features(FeatureData(Z, data.y), cfg, n_classes=n_classes)


def pretrain_encoder(data, dims, cfg, whiten_scale=0.0):
    """Joint full-batch GD on encoder + throwaway softmax head; head is discarded.

    With whiten_scale > 0 a scaled ZCA whitening of the resulting training
    features is folded into the last linear layer, so downstream code sees
    only an ordinary frozen MLP.
    """
    if cfg.epochs <= 0:
        raise ValueError("epochs must be positive")
    X, y = data.X, data.y
    if X.shape[1] != dims[0]:
        raise ValueError(f"input dim {X.shape[1]} does not match dims[0]={dims[0]}")
    rng = RngState(cfg.seed, STREAM_PRETRAIN)
    weights, biases = init_mlp(list(dims), rng)
    c = int(y.max()) + 1
    hW, hb = np.zeros((c, dims[-1])), np.zeros(c)
    n = len(y)
    for e in range(cfg.epochs):
        step = lr_at(cfg, e)
        acts = mlp_forward(weights, biases, X)
        Zf = acts[-1]
        L = Zf @ hW.T + hb
        _check_finite_logits(L, e)
        P = softmax_rows(L)
        P[np.arange(n), y] -= 1.0
        P /= n
        dZ = P @ hW
        gW, gb, _ = mlp_backward(weights, biases, acts, dZ)
        for i in range(len(weights)):
            weights[i] -= step * gW[i]
            biases[i] -= step * gb[i]
        hW -= step * (P.T @ Zf)
        hb -= step * P.sum(axis=0)
    if whiten_scale > 0.0:
        Z0 = mlp_forward(weights, biases, X)[-1]
        m = Z0.mean(0)
        C = np.cov(Z0.T, bias=True)
        lam, Q = np.linalg.eigh(C)
        lam = np.maximum(lam, 1e-12)
        D = whiten_scale * (Q / np.sqrt(lam)) @ Q.T  # symmetric ZCA transform
        weights[-1] = weights[-1] @ D.T
        biases[-1] = (biases[-1] - m) @ D.T
    return Encoder(tuple(weights), tuple(biases), frozen=True)


def train_decoder(f, data, dims, cfg):
    """Fit a reconstruction MLP on top of the frozen encoder's features."""
    if cfg.epochs <= 0:
        raise ValueError("epochs must be positive")
    X = data.X
    if dims[0] != f.dims[-1]:
        raise ValueError(f"decoder input dim {dims[0]} does not match encoder output {f.dims[-1]}")
    if dims[-1] != X.shape[1]:
        raise ValueError(f"decoder output dim {dims[-1]} does not match data dim {X.shape[1]}")
    rng = RngState(cfg.seed, STREAM_DECODER)
    dW, db = init_mlp(list(dims), rng)
    Zin = encode(f, X)  # encoder frozen: hoist out of the loop
    n = X.shape[0]
    for e in range(cfg.epochs):
        step = lr_at(cfg, e)
        dacts = mlp_forward(dW, db, Zin)
        rec = dacts[-1]
        dOut = 2.0 * (rec - X) / (n * X.shape[1])
        gW, gb, _ = mlp_backward(dW, db, dacts, dOut)
        for i in range(len(dW)):
            dW[i] -= step * gW[i]
            db[i] -= step * gb[i]
    return Encoder(tuple(dW), tuple(db), frozen=True)


def train_autoencoder(data, enc_dims, dec_dims, cfg):
    """Train encoder and decoder jointly on the reconstruction loss.

    Serves as the end-to-end control for the fixed-encoder decoder: same
    init stream, same schedule, both halves updated from the same loss.
    """
    if cfg.epochs <= 0:
        raise ValueError("epochs must be positive")
    X = data.X
    if enc_dims[0] != X.shape[1] or dec_dims[-1] != X.shape[1]:
        raise ValueError("autoencoder dims must start and end at the data dim")
    if enc_dims[-1] != dec_dims[0]:
        raise ValueError("encoder output dim must match decoder input dim")
    rng = RngState(cfg.seed, STREAM_DECODER)
    eW, eb = init_mlp(list(enc_dims), rng)
    dW, db = init_mlp(list(dec_dims), rng)
    n = X.shape[0]
    for e in range(cfg.epochs):
        step = lr_at(cfg, e)
        eacts = mlp_forward(eW, eb, X)
        dacts = mlp_forward(dW, db, eacts[-1])
        rec = dacts[-1]
        dOut = 2.0 * (rec - X) / (n * X.shape[1])
        gW, gb, gZ = mlp_backward(dW, db, dacts, dOut)
        gZin = gZ @ dW[0].T  # before the decoder update: gradient at current weights
        geW, geb, _ = mlp_backward(eW, eb, eacts, gZin)
        for i in range(len(dW)):
            dW[i] -= step * gW[i]
            db[i] -= step * gb[i]
        for i in range(len(eW)):
            eW[i] -= step * geW[i]
            eb[i] -= step * geb[i]
    return (Encoder(tuple(eW), tuple(eb), frozen=True),
            Encoder(tuple(dW), tuple(db), frozen=True))


def accuracy_features(head, data):
    """Fraction of argmax predictions matching labels; ties go to the lowest class."""
    Z, y = data.Z, data.y
    return float(np.mean(np.argmax(Z @ head.W.T + head.b, axis=1) == y))


def accuracy(f, head, data):
    return accuracy_features(head, FeatureData(encode(f, data.X), data.y))
