"""Availability-poisoning attacks against a frozen feature extractor.

Five constructions plus decoder-inversion assembly:

- gradient canceling in feature space (drive the summed head gradient at the
  target parameters to zero by optimizing poison feature rows),
- gradient canceling in input space (same residual, descended through the
  frozen encoder, with optional fidelity penalty and box projection),
- total-gradient descent-ascent (implicit differentiation through the head's
  optimality conditions),
- feature matching (prox-regularized inversion of target features back to
  input space, with nearest-neighbor base pairing),
- error-minimizing noise (alternating head training and per-sample PGD).

Descent loops are monotone: a trial step is accepted only if it strictly
decreases the objective, halving otherwise, so every residual trace is
non-increasing. The gradient-canceling steps refresh the trial step with a
Barzilai-Borwein spectral estimate between iterations.
"""

from dataclasses import dataclass

import numpy as np

from .model import (FeatureData, LabeledData, ce_loss, encode, flatten_params,
                    grad_head, hvp_head, cross_grad_vjp, input_grad,
                    mlp_backward, mlp_forward, unflatten_params)
from .numkit import clip_box, prox_avg, softmax_rows
from .trainer import TrainConfig, cosine_lr, init_mlp, train_head_features

TGDA_DAMPING = 1e-3
CG_REL_TOL = 1e-8
CG_MAX_ITER = 500
# matching/refinement step schedule base; the zeta stage takes cfg.eta instead
FM_PROX_LR = 0.1


@dataclass
class AttackConfig:
    eps_d: float = 0.1
    eta: float = 0.1
    epochs: int = 2000
    gamma: float = 1.0
    beta: float = 0.25
    box: tuple = None  # (lo, hi), scalars or per-column arrays
    stop_residual: float = 1e-8
    k: int = 1
    s: int = 50
    t: int = 2000
    use_optional_refinement: bool = False
    constrained: bool = False

    def __post_init__(self):
        if not self.eps_d > 0:
            raise ValueError("eps_d must be positive")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be >= 0")
        if self.epochs < 0 or self.k < 0 or self.s < 0 or self.t < 0:
            raise ValueError("loop counts must be >= 0")
        if self.stop_residual < 0:
            raise ValueError("stop_residual must be >= 0")


@dataclass
class PoisonResult:
    """Attack output: poison set with labels, objective trace, bookkeeping."""

    nu: object  # LabeledData (input space) or FeatureData (feature space)
    residual_trace: np.ndarray
    final_linf: float
    pairing: np.ndarray = None  # poison row -> clean base row index


def poison_count(eps_d, n):
    """Poison set size: round-half-up of eps_d*n; zero is a config error."""
    m = int(np.floor(eps_d * n + 0.5))
    if m < 1:
        raise ValueError(f"eps_d={eps_d} rounds to zero poison points for n={n}")
    return m


def _sum_gradient(head, data):
    """Summed (not mean) head gradient over the given feature rows."""
    dW, db = grad_head(head, data)
    n = len(data.y)
    return n * dW, n * db


def _residual_and_grad(head, GcW, Gcb, zeta, yz):
    """Cancellation residual 0.5||Gc + sum-grad(zeta)||^2 and its zeta gradient."""
    W, b = head.W, head.b
    n_rows = zeta.shape[0]
    P = softmax_rows(zeta @ W.T + b)
    E = P.copy()
    E[np.arange(n_rows), yz] -= 1.0
    gW = E.T @ zeta
    gb = E.sum(0)
    r_W = GcW + gW
    r_b = Gcb + gb
    res = 0.5 * (np.sum(r_W ** 2) + np.sum(r_b ** 2))
    # row gradient: E r_W from the linear part, plus the softmax curvature term
    Urows = zeta @ r_W.T + r_b
    PU = P * Urows
    S = PU - P * PU.sum(1, keepdims=True)
    gz = E @ r_W + S @ W
    return res, gz


def gc_residual(g_clean, head_hat, nu):
    """Residual 0.5||g_clean + sum of per-row gradients at nu||^2.

    g_clean is the flattened summed clean gradient at the target head; the
    poison side always enters as a sum so that a vanishing residual makes
    the mixture gradient itself vanish.
    """
    c, p = head_hat.W.shape
    GcW, Gcb = unflatten_params(np.asarray(g_clean, dtype=np.float64), c, p)
    if nu.Z.shape[1] != p:
        raise ValueError(f"feature dim {nu.Z.shape[1]} does not match head ({p})")
    res, _ = _residual_and_grad(head_hat, GcW, Gcb, nu.Z, nu.y)
    return float(res)


def _bb_minimize(value_and_grad, project, x0, eta, epochs, stop):
    """Monotone projected descent with a BB1 spectral trial step.

    Accept a candidate only on strict decrease; halve the step up to 60
    times, stop when no step is accepted or the objective drops below
    `stop`. Returns (x, value, trace); the trace has one entry per
    iteration performed plus the initial value and is non-increasing.
    """
    x = project(x0)
    res, g = value_and_grad(x)
    if not np.isfinite(res):
        raise RuntimeError("non-finite residual at epoch 0")
    trace = [res]
    step = eta
    x_prev = g_prev = None
    it = 0
    while it < epochs and res >= stop:
        it += 1
        if x_prev is not None:
            dx = (x - x_prev).ravel()
            dg = (g - g_prev).ravel()
            denom = dx @ dg
            if denom > 0:
                step = (dx @ dx) / denom
        x_prev, g_prev = x, g
        accepted = False
        for _ in range(60):
            cand = project(x - step * g)
            res2, g2 = value_and_grad(cand)
            if res2 < res:
                x, g, res = cand, g2, res2
                accepted = True
                break
            step *= 0.5
        if not np.isfinite(res):
            raise RuntimeError(f"non-finite residual at epoch {it}")
        trace.append(res)
        if not accepted:
            break
    return x, res, trace


def _make_project(box):
    if box is None:
        return lambda V: V
    lo, hi = box
    return lambda V: clip_box(V, lo, hi)


def gc_feature_attack(f_mu, head_hat, cfg, rng):
    """Optimize poison feature rows to cancel the summed clean gradient.

    Rows start from randomly chosen clean feature rows and keep those clean
    labels. cfg.box, when set, constrains the rows by projection.
    """
    Zc, yc = f_mu.Z, f_mu.y
    n = Zc.shape[0]
    m = poison_count(cfg.eps_d, n)
    GcW, Gcb = _sum_gradient(head_hat, f_mu)
    idx = rng.choice(n, size=m, replace=False)
    zeta0 = Zc[idx].copy()
    yz = yc[idx].copy()
    zeta, res, trace = _bb_minimize(
        lambda z: _residual_and_grad(head_hat, GcW, Gcb, z, yz),
        _make_project(cfg.box), zeta0, cfg.eta, cfg.epochs, cfg.stop_residual)
    return PoisonResult(nu=FeatureData(zeta, yz),
                        residual_trace=np.asarray(trace),
                        final_linf=float(np.abs(zeta).max()),
                        pairing=idx)


def gc_input_attack(mu, f, head_hat, cfg, rng):
    """Gradient canceling over input rows, descending through the frozen encoder.

    cfg.constrained adds the beta/2 * ||nu - base||^2 fidelity penalty to the
    objective; cfg.box, independently, projects the rows into the box.
    """
    Xc, yc = mu.X, mu.y
    n = Xc.shape[0]
    m = poison_count(cfg.eps_d, n)
    Zc = encode(f, Xc)
    GcW, Gcb = _sum_gradient(head_hat, FeatureData(Zc, yc))
    idx = rng.choice(n, size=m, replace=False)
    base = Xc[idx].copy()
    yz = yc[idx].copy()

    def objective(V):
        acts = mlp_forward(f.weights, f.biases, V)
        res, gz = _residual_and_grad(head_hat, GcW, Gcb, acts[-1], yz)
        gx = input_grad(f.weights, f.biases, acts, gz)
        if cfg.constrained:
            res = res + 0.5 * cfg.beta * float(np.sum((V - base) ** 2))
            gx = gx + cfg.beta * (V - base)
        return res, gx

    nu, res, trace = _bb_minimize(objective, _make_project(cfg.box),
                                  base.copy(), cfg.eta, cfg.epochs,
                                  cfg.stop_residual)
    return PoisonResult(nu=LabeledData(nu, yz),
                        residual_trace=np.asarray(trace),
                        final_linf=float(np.abs(nu).max()),
                        pairing=idx)


def _cg_solve(apply_A, g, rel_tol=CG_REL_TOL, max_iter=CG_MAX_ITER):
    x = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    rs = float(r @ r)
    g0 = np.sqrt(float(g @ g))
    for _ in range(max_iter):
        if np.sqrt(rs) <= rel_tol * g0:
            return x
        Ap = apply_A(p)
        alpha = rs / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= rel_tol * g0:
        return x
    raise RuntimeError(f"conjugate gradients did not converge: residual norm {np.sqrt(rs):.3e}")


def _as_features(f, data):
    if isinstance(data, FeatureData):
        return data
    if f is None:
        raise ValueError("input-space data requires an encoder")
    return FeatureData(encode(f, data.X), data.y)


def total_gradient(f, head, nu, val, damping=TGDA_DAMPING, train=None):
    """Total derivative of validation loss with respect to the poison rows.

    D_nu l1 = -grad_{omega,nu} l2 . (H + damping I)^{-1} . grad_omega l1,
    with H the head Hessian of the training loss and the inverse applied by
    conjugate gradients. `train` supplies the training mixture for H and
    the normalization (defaults to nu alone); cross_grad_vjp's per-nu-row
    mean is rescaled by m/n_train accordingly. nu may be FeatureData
    (f ignored) or LabeledData differentiated through the frozen f.
    """
    val_feats = _as_features(f, val)
    g1W, g1b = grad_head(head, val_feats)
    g1 = flatten_params(g1W, g1b)
    rows = nu.Z if isinstance(nu, FeatureData) else nu.X
    if np.linalg.norm(g1) == 0.0:
        return np.zeros_like(rows)
    train_feats = _as_features(f, nu) if train is None else _as_features(f, train)
    x = _cg_solve(lambda v: hvp_head(head, train_feats, v) + damping * v, g1)
    m = rows.shape[0]
    scale = m / train_feats.Z.shape[0]
    vjp = cross_grad_vjp(None if isinstance(nu, FeatureData) else f, head, nu, x)
    return -scale * vjp


def tgda_attack(mu, mu_tilde, f, cfg, rng):
    """Total gradient descent-ascent: leader steps on nu, follower steps on omega.

    The follower head is warm-started with 100 full-batch GD steps on the
    initial mixture, then each round takes one leader ascent step
    nu += eta * D_nu l1 (proximal pull and box projection when configured)
    followed by one follower descent step on the current mixture.
    """
    feature_space = isinstance(mu, FeatureData)
    rows = mu.Z if feature_space else mu.X
    y = mu.y
    n = rows.shape[0]
    m = poison_count(cfg.eps_d, n)
    idx = rng.choice(n, size=m, replace=False)
    base = rows[idx].copy()
    yz = y[idx].copy()
    nu = base.copy()
    if cfg.eta == 0.0:
        return PoisonResult(nu=(FeatureData(nu, yz) if feature_space else LabeledData(nu, yz)),
                            residual_trace=np.zeros(0), final_linf=float(np.abs(nu).max()),
                            pairing=idx)
    wrap = FeatureData if feature_space else LabeledData
    c = int(y.max()) + 1
    Zc = rows if feature_space else encode(f, rows)
    val_feats = _as_features(f, mu_tilde)

    def mixture():
        Znu = nu if feature_space else encode(f, nu)
        return FeatureData(np.vstack([Zc, Znu]), np.concatenate([y, yz]))

    mix = mixture()
    head = train_head_features(mix, TrainConfig(epochs=100, lr=cfg.eta,
                                                schedule="constant", seed=0),
                               n_classes=c)
    n_total = n + m
    Ymix = np.eye(c)[np.concatenate([y, yz])]
    project = _make_project(cfg.box)
    trace = []
    for e in range(cfg.epochs):
        G = total_gradient(f, head, wrap(nu, yz), val_feats,
                           damping=TGDA_DAMPING, train=mix)
        nu = nu + cfg.eta * G
        if cfg.constrained:
            nu = prox_avg(nu, base, cfg.eta, cfg.beta)
        nu = project(nu)
        mix = mixture()
        P = softmax_rows(mix.Z @ head.W.T + head.b)
        head.W -= cfg.eta * (P - Ymix).T @ mix.Z / n_total
        head.b -= cfg.eta * (P - Ymix).sum(0) / n_total
        l1 = ce_loss(head, val_feats)
        if not np.isfinite(l1):
            raise RuntimeError(f"non-finite validation loss at epoch {e}")
        trace.append(l1)
    return PoisonResult(nu=wrap(nu, yz), residual_trace=np.asarray(trace),
                        final_linf=float(np.abs(nu).max()), pairing=idx)


def rank_pair(f_mu, zeta):
    """Nearest clean feature row for each poison feature row.

    Returns the pairing indices and zeta relabeled with the matched clean
    labels (ties resolve to the lowest clean index).
    """
    Zc = f_mu.Z
    if zeta.shape[1] != Zc.shape[1]:
        raise ValueError(f"feature dim {zeta.shape[1]} does not match clean rows ({Zc.shape[1]})")
    d2 = ((zeta[:, None, :] - Zc[None, :, :]) ** 2).sum(-1)
    pairing = np.argmin(d2, axis=1)
    return pairing, FeatureData(zeta, f_mu.y[pairing])


def feature_matching_attack(mu, f, head_hat, cfg, rng):
    """Invert target features to input space by prox-regularized matching.

    Stage one builds target features with gc_feature_attack (cfg.eta is its
    trial step; cfg.box constrains the targets). Stage two pairs each target
    with its nearest clean feature row; the paired clean inputs become the
    base instances and supply the labels. Then k rounds: optionally s
    refinement steps on the targets (residual descent plus a proximal pull
    toward f(nu)), and t matching steps on nu, each a gradient step on
    gamma/2 ||f(nu) - zeta||^2 followed by prox_avg toward the bases. The
    matching schedule is cosine from 0.1 with backtracking on the composite
    objective.
    """
    f_mu = _as_features(f, mu)
    gc = gc_feature_attack(f_mu, head_hat, cfg, rng)
    zeta = gc.nu.Z
    pairing, relabeled = rank_pair(f_mu, zeta)
    yz = relabeled.y
    base = mu.X[pairing].copy()
    nu = base.copy()
    GcW, Gcb = _sum_gradient(head_hat, f_mu)

    def composite(V):
        acts = mlp_forward(f.weights, f.biases, V)
        diff = acts[-1] - zeta
        cm = 0.5 * cfg.gamma * float(np.sum(diff ** 2))
        cp = 0.5 * cfg.beta * float(np.sum((V - base) ** 2))
        gx = input_grad(f.weights, f.biases, acts, cfg.gamma * diff)
        return cm + cp, gx

    trace = []
    cobj, gx = composite(nu)
    trace.append(cobj)
    for _round in range(cfg.k):
        if cfg.use_optional_refinement:
            Znu = encode(f, nu)
            for si in range(cfg.s):
                eta_r = cosine_lr(FM_PROX_LR, si, cfg.s)
                _, gz = _residual_and_grad(head_hat, GcW, Gcb, zeta, yz)
                zeta = zeta - eta_r * gz
                zeta = prox_avg(zeta, Znu, eta_r, cfg.gamma)
            cobj, gx = composite(nu)  # zeta moved: refresh the objective
        for e in range(cfg.t):
            eta = cosine_lr(FM_PROX_LR, e, cfg.t)
            for _ in range(40):
                cand = nu - eta * gx
                cand = prox_avg(cand, base, eta, cfg.beta)
                cobj2, gx2 = composite(cand)
                if cobj2 < cobj:
                    nu, cobj, gx = cand, cobj2, gx2
                    break
                eta *= 0.5
            if not np.isfinite(cobj):
                raise RuntimeError(f"non-finite matching loss at epoch {e}")
            trace.append(cobj)
    return PoisonResult(nu=LabeledData(nu, yz), residual_trace=np.asarray(trace),
                        final_linf=float(np.abs(nu).max()), pairing=pairing)


def emn_attack(mu, f, cfg, eps_inf, rng, rounds=20, head_steps=10, step_frac=0.25):
    """Error-minimizing noise against the frozen encoder.

    Alternates head_steps GD steps of a surrogate softmax head (lr cfg.eta)
    with one signed PGD step of size eps_inf*step_frac on the per-sample
    noise, keeping ||delta||_inf <= eps_inf and the rows inside cfg.box.
    The whole training set is perturbed. rng is part of the common attack
    signature; this variant is deterministic.
    """
    if eps_inf < 0:
        raise ValueError("eps_inf must be >= 0")
    X, y = mu.X, mu.y
    if eps_inf == 0.0:
        return LabeledData(X.copy(), y.copy())
    n = X.shape[0]
    c = int(y.max()) + 1
    Y = np.eye(c)[y]
    delta = np.zeros_like(X)
    W = np.zeros((c, f.dims[-1]))
    b = np.zeros(c)
    boxed = cfg.box is not None
    if boxed:
        lo, hi = cfg.box

    def clip_rows(A):
        return np.clip(A, lo, hi) if boxed else A

    for r in range(rounds):
        Xp = clip_rows(X + delta)
        Z = encode(f, Xp)
        for _ in range(head_steps):
            L = Z @ W.T + b
            if not np.isfinite(L).all():
                raise RuntimeError(f"non-finite training loss at round {r}")
            P = softmax_rows(L)
            W -= cfg.eta * (P - Y).T @ Z / n
            b -= cfg.eta * (P - Y).sum(0) / n
        Xp = clip_rows(X + delta)
        acts = mlp_forward(f.weights, f.biases, Xp)
        P = softmax_rows(acts[-1] @ W.T + b)
        dZ = (P - Y) @ W / n
        gX = input_grad(f.weights, f.biases, acts, dZ)
        delta = np.clip(delta - (eps_inf * step_frac) * np.sign(gX), -eps_inf, eps_inf)
        if boxed:
            delta = np.clip(X + delta, lo, hi) - X
    return LabeledData(clip_rows(X + delta), y.copy())


def emn_joint_attack(mu, dims, cfg, eps_inf, rng, rounds=80, head_steps=3,
                     pgd_steps=5, step_frac=0.125):
    """Error-minimizing noise crafted against a trainable network.

    The crafting network (random init from rng, lr cfg.eta) and its head
    are trained jointly for head_steps per round; each round then takes
    pgd_steps signed noise steps against the current network. This is the
    end-to-end control: the same noise objective, but the encoder may adapt.
    """
    if eps_inf < 0:
        raise ValueError("eps_inf must be >= 0")
    X, y = mu.X, mu.y
    if eps_inf == 0.0:
        return LabeledData(X.copy(), y.copy())
    weights, biases = init_mlp(list(dims), rng)
    n = len(y)
    c = int(y.max()) + 1
    hW, hb = np.zeros((c, dims[-1])), np.zeros(c)
    Y = np.eye(c)[y]
    delta = np.zeros_like(X)
    boxed = cfg.box is not None
    if boxed:
        lo, hi = cfg.box

    def clip_rows(A):
        return np.clip(A, lo, hi) if boxed else A

    lr = cfg.eta
    for r in range(rounds):
        for _ in range(head_steps):
            Xp = clip_rows(X + delta)
            acts = mlp_forward(weights, biases, Xp)
            Z = acts[-1]
            L = Z @ hW.T + hb
            if not np.isfinite(L).all():
                raise RuntimeError(f"non-finite training loss at round {r}")
            P = softmax_rows(L)
            G = (P - Y) / n
            dZ = G @ hW
            gW, gb, _ = mlp_backward(weights, biases, acts, dZ)
            for i in range(len(weights)):
                weights[i] -= lr * gW[i]
                biases[i] -= lr * gb[i]
            hW -= lr * G.T @ Z
            hb -= lr * G.sum(0)
        for _ in range(pgd_steps):
            Xp = clip_rows(X + delta)
            acts = mlp_forward(weights, biases, Xp)
            Z = acts[-1]
            P = softmax_rows(Z @ hW.T + hb)
            G = (P - Y) / n
            dZ = G @ hW
            _, _, g1 = mlp_backward(weights, biases, acts, dZ)
            gX = g1 @ weights[0].T
            delta = np.clip(delta - (eps_inf * step_frac) * np.sign(gX),
                            -eps_inf, eps_inf)
            if boxed:
                delta = np.clip(X + delta, lo, hi) - X
    return LabeledData(clip_rows(X + delta), y.copy())


def decoder_invert(g, zeta, box):
    """Map target features through the learned decoder, clip to the data box."""
    rec = encode(g, zeta.Z)
    lo, hi = box
    return LabeledData(clip_box(rec, lo, hi), zeta.y.copy())
