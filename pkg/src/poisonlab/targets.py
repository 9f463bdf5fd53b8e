"""Target head construction: short normalized gradient ascent on validation loss.

The target is the clean head displaced by exactly eps_w (plain L2 over the
flattened (W, b) vector) in a direction found by `steps` normalized ascent
steps on the validation cross-entropy. The final renormalization makes the
radius exact regardless of the path taken.
"""

from dataclasses import dataclass

import numpy as np

from .model import FeatureData, LinearHead, encode, flatten_params, grad_head


@dataclass(frozen=True)
class TargetSpec:
    eps_w: float
    steps: int = 1

    def __post_init__(self):
        if not self.eps_w > 0:
            raise ValueError("eps_w must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def gradpc(f, head, val, spec):
    """Gradient-path target: ascend val loss, then pin ||target - head|| = eps_w.

    `val` is FeatureData, or LabeledData encoded through f. Raises if the
    validation gradient vanishes (no ascent direction exists).
    """
    if isinstance(val, FeatureData):
        feats = val
    else:
        feats = FeatureData(encode(f, val.X), val.y)
    W0, b0 = head.W.copy(), head.b.copy()
    Wc, bc = head.W.copy(), head.b.copy()
    for _ in range(spec.steps):
        dW, db = grad_head(LinearHead(Wc, bc), feats)
        g = np.concatenate([dW.ravel(), db])
        ng = np.linalg.norm(g)
        if ng == 0:
            raise ValueError("validation gradient is zero; no ascent direction")
        Wc = Wc + (spec.eps_w / spec.steps) * dW / ng
        bc = bc + (spec.eps_w / spec.steps) * db / ng
    disp = flatten_params(Wc, bc) - flatten_params(W0, b0)
    disp *= spec.eps_w / np.linalg.norm(disp)
    p = W0.size
    return LinearHead(W0 + disp[:p].reshape(W0.shape), b0 + disp[p:])
