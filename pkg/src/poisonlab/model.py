"""Frozen MLP encoder, softmax linear head, and the analytic derivatives.

The encoder is a plain ReLU MLP with an identity output layer; weights are
stored input-major (fan_in x fan_out) so the forward pass is a single
row-major matmul per layer. The head is multinomial logistic regression
with parameters (W: classes x features, b: classes). All losses are means
over samples. Head parameters flatten in a fixed order (W row-major, then
b); every module shares that order.
"""

from dataclasses import dataclass, field

import numpy as np

from .numkit import softmax_rows


@dataclass(frozen=True)
class Encoder:
    """ReLU MLP; `weights[i]` has shape (dims[i], dims[i+1]).

    When `frozen` the arrays are marked read-only, so any attempt to train
    through the encoder trips a write error instead of silently corrupting
    the threat model.
    """

    weights: tuple
    biases: tuple
    frozen: bool = True

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.biases)
        if len(ws) != len(bs):
            raise ValueError("layer count mismatch between weights and biases")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i > 0 and ws[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} breaks the dimension chain")
        if self.frozen:
            for a in ws + bs:
                a.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def dims(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


@dataclass
class LinearHead:
    """Softmax regression parameters; W is (classes x features)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self):
        return self.W.shape[0]


@dataclass(frozen=True)
class LabeledData:
    """Input-space rows with integer labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")


@dataclass(frozen=True)
class FeatureData:
    """Encoded rows with integer labels."""

    Z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.Z.shape[0] != self.y.shape[0]:
            raise ValueError("Z and y row counts differ")


def mlp_forward(weights, biases, X):
    """Forward pass keeping every post-activation; acts[0] is X, acts[-1] the output."""
    acts = [X]
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        if i < last:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def mlp_backward(weights, biases, acts, dout):
    """Reverse pass for mlp_forward.

    Returns per-layer weight/bias gradients and the gradient with respect to
    the first layer's pre-activation (multiply by weights[0].T for the input
    gradient). The ReLU subgradient at exactly 0 is 0.
    """
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    g = dout
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i].T) * (acts[i] > 0)
    return gw, gb, g


def input_grad(weights, biases, acts, dout):
    """Gradient of <dout, output> with respect to the network input."""
    _, _, g = mlp_backward(weights, biases, acts, dout)
    return g @ weights[0].T


def encode(f, X):
    if X.shape[1] != f.weights[0].shape[0]:
        raise ValueError(f"input dim {X.shape[1]} does not match encoder ({f.dims[0]})")
    return mlp_forward(f.weights, f.biases, X)[-1]


def ce_loss(head, data):
    """Mean cross-entropy of softmax(Z W^T + b) against the labels."""
    Z, y = data.Z, data.y
    if Z.shape[1] != head.W.shape[1]:
        raise ValueError(f"feature dim {Z.shape[1]} does not match head ({head.W.shape[1]})")
    L = Z @ head.W.T + head.b
    m = L.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(L - m).sum(axis=1))
    return float(np.mean(lse - L[np.arange(len(y)), y]))


def grad_head(head, data):
    """Analytic mean gradient of ce_loss in (W, b)."""
    Z, y = data.Z, data.y
    P = softmax_rows(Z @ head.W.T + head.b)
    P[np.arange(len(y)), y] -= 1.0
    n = len(y)
    return P.T @ Z / n, P.sum(axis=0) / n


def grad_features(head, data):
    """Per-sample gradient of ce_loss in the feature rows, stacked n x p."""
    Z, y = data.Z, data.y
    P = softmax_rows(Z @ head.W.T + head.b)
    P[np.arange(len(y)), y] -= 1.0
    return (P @ head.W) / len(y)


def grad_inputs(f, head, data):
    """Gradient of mean ce_loss in the input rows, through the frozen encoder."""
    acts = mlp_forward(f.weights, f.biases, data.X)
    P = softmax_rows(acts[-1] @ head.W.T + head.b)
    P[np.arange(len(data.y)), data.y] -= 1.0
    dz = (P @ head.W) / len(data.y)
    return input_grad(f.weights, f.biases, acts, dz)


def grad_inputs_matching(f, nu, zeta):
    """Gradient of the matching term 0.5*||f(nu) - zeta||^2 in nu."""
    acts = mlp_forward(f.weights, f.biases, nu)
    return input_grad(f.weights, f.biases, acts, acts[-1] - zeta)


def flatten_params(W, b):
    return np.concatenate([W.ravel(), b])


def unflatten_params(v, n_classes, n_features):
    cp = n_classes * n_features
    if v.shape[0] != cp + n_classes:
        raise ValueError(f"flat vector length {v.shape[0]} does not match ({n_classes}, {n_features})")
    return v[:cp].reshape(n_classes, n_features), v[cp:]


def hvp_head(head, data, v):
    """Exact Hessian-vector product of ce_loss at the head parameters.

    v is a flat vector over (W, b); the result uses the same layout. For
    softmax cross-entropy the curvature acts per sample through
    diag(p) - p p^T on the logit-space component of v.
    """
    Z, y = data.Z, data.y
    vW, vb = unflatten_params(v, head.W.shape[0], head.W.shape[1])
    n = Z.shape[0]
    P = softmax_rows(Z @ head.W.T + head.b)
    S = Z @ vW.T + vb
    M = P * S - P * (P * S).sum(axis=1, keepdims=True)
    return flatten_params(M.T @ Z / n, M.sum(axis=0) / n)


def cross_grad_vjp(f, head, nu, v):
    """d/d(nu) of <grad_head(head, nu), v>, the mixed second-derivative VJP.

    `nu` is FeatureData (set f=None) or LabeledData differentiated through
    the frozen encoder f. grad_head here is the mean over nu's own rows;
    callers folding nu into a larger mixture rescale by m/n_total.
    """
    if isinstance(nu, FeatureData):
        Z = nu.Z
        acts = None
    else:
        if f is None:
            raise ValueError("input-space nu requires an encoder")
        acts = mlp_forward(f.weights, f.biases, nu.X)
        Z = acts[-1]
    y = nu.y
    vW, vb = unflatten_params(v, head.W.shape[0], head.W.shape[1])
    m = Z.shape[0]
    P = softmax_rows(Z @ head.W.T + head.b)
    Y = np.zeros_like(P)
    Y[np.arange(m), y] = 1.0
    S = Z @ vW.T + vb
    M = P * S - P * (P * S).sum(axis=1, keepdims=True)
    dz = (M @ head.W + (P - Y) @ vW) / m
    if acts is None:
        return dz
    return input_grad(f.weights, f.biases, acts, dz)
