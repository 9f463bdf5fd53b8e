"""Retrain-on-mixture evaluation and multi-seed sweep orchestration.

The measurement protocol: train a fresh head on the clean features, train
another fresh head on clean+poison features with the same config, report
both test accuracies and their difference, plus the distance of the
retrained head from a target head when one is supplied. Failures inside a
sweep are recorded per cell, never aborting the run.
"""

from dataclasses import dataclass

import numpy as np

from .attacks import (AttackConfig, decoder_invert, emn_attack,
                      feature_matching_attack, gc_feature_attack, gc_input_attack,
                      tgda_attack)
from .model import FeatureData, LabeledData, encode, flatten_params
from .numkit import STREAM_ATTACK, STREAM_DATA, RngState
from .targets import TargetSpec, gradpc
from .trainer import TrainConfig, accuracy_features, pretrain_encoder, train_decoder, train_head_features


@dataclass
class EvalReport:
    clean_acc: float
    poisoned_acc: float
    drop: float  # clean_acc - poisoned_acc, computed once
    reach_gap: float
    poison_linf: float
    n_poison: int
    n_removed_by_defense: int
    seed: int
    attack: str = ""
    eps_d: float = 0.0
    error: str = ""


def _feats(f, data):
    if isinstance(data, FeatureData):
        return data
    if f is None:
        raise ValueError("input-space data requires an encoder")
    return FeatureData(encode(f, data.X), data.y)


def _rows(data):
    return data.Z if isinstance(data, FeatureData) else data.X


def anomaly_filter(nu, clean_linf):
    """Drop rows whose L-infinity magnitude exceeds the clean data's.

    Survivor order is preserved, so the filter is idempotent. Returns the
    filtered set and the removed count.
    """
    if not clean_linf > 0:
        raise ValueError("clean_linf must be positive")
    rows = _rows(nu)
    keep = np.abs(rows).max(axis=1) <= clean_linf
    y = nu.y[keep]
    if isinstance(nu, FeatureData):
        kept = FeatureData(rows[keep], y)
    else:
        kept = LabeledData(rows[keep], y)
    return kept, int((~keep).sum())


def evaluate_poison(f, mu_train, mu_test, nu=None, cfg=None, target=None,
                    defense_linf=None, replace=False):
    """Retrain-with-poison measurement.

    nu may be input-space (encoded through f before mixing) or feature
    rows; replace=True trains on nu alone instead of the clean+nu union
    (the full-perturbation protocol). defense_linf, when given, applies
    anomaly_filter to nu first. poison_linf and n_poison describe the
    poison as supplied, before any defense.
    """
    if cfg is None:
        cfg = TrainConfig()
    train_feats = _feats(f, mu_train)
    test_feats = _feats(f, mu_test)
    c = int(mu_train.y.max()) + 1
    clean_head = train_head_features(train_feats, cfg, n_classes=c)
    clean_acc = accuracy_features(clean_head, test_feats)

    n_removed = 0
    n_poison = 0
    poison_linf = 0.0
    if nu is not None:
        rows = _rows(nu)
        n_poison = rows.shape[0]
        poison_linf = float(np.abs(rows).max()) if rows.size else 0.0
        if defense_linf is not None:
            nu, n_removed = anomaly_filter(nu, defense_linf)
        poison_feats = _feats(f, nu)
        if poison_feats.Z.shape[1] != train_feats.Z.shape[1]:
            raise ValueError(f"poison feature dim {poison_feats.Z.shape[1]} does not "
                             f"match clean features ({train_feats.Z.shape[1]})")
        if replace:
            mixed = poison_feats
        else:
            mixed = FeatureData(np.vstack([train_feats.Z, poison_feats.Z]),
                                np.concatenate([train_feats.y, poison_feats.y]))
    else:
        mixed = train_feats
    retrained = train_head_features(mixed, cfg, n_classes=c)
    poisoned_acc = accuracy_features(retrained, test_feats)
    reach_gap = 0.0
    if target is not None:
        reach_gap = float(np.linalg.norm(flatten_params(retrained.W, retrained.b)
                                         - flatten_params(target.W, target.b)))
    return EvalReport(clean_acc=clean_acc, poisoned_acc=poisoned_acc,
                      drop=clean_acc - poisoned_acc, reach_gap=reach_gap,
                      poison_linf=poison_linf, n_poison=n_poison,
                      n_removed_by_defense=n_removed, seed=cfg.seed)


def split_interleaved(data):
    """Deterministic 4-way interleave: train, test, validation (2 strides)."""
    X, y = data.X, data.y
    train = LabeledData(X[0::4], y[0::4])
    test = LabeledData(X[1::4], y[1::4])
    val = LabeledData(np.vstack([X[2::4], X[3::4]]),
                      np.concatenate([y[2::4], y[3::4]]))
    return train, test, val


@dataclass
class _Bench:
    encoder: object
    train: LabeledData
    test: LabeledData
    val: LabeledData
    train_feats: FeatureData
    val_feats: FeatureData
    clean_head: object
    clean_acc: float
    target: object
    data_box: tuple


def _build_bench(spec, seed):
    from .io_cli import gen_blobs, read_dataset, read_model  # io_cli imports us

    box = (spec.data.box_lo, spec.data.box_hi)
    if spec.data.path:
        data, _c = read_dataset(spec.data.path)
    else:
        rng = RngState(seed, STREAM_DATA)
        data = gen_blobs(rng, spec.data.n, spec.data.d, spec.data.c,
                         spec.data.separation, box, sigma=spec.data.sigma)
    train, test, val = split_interleaved(data)
    if spec.encoder.path:
        f = read_model(spec.encoder.path)
    else:
        f = pretrain_encoder(train, spec.encoder.dims,
                             TrainConfig(epochs=spec.encoder.epochs,
                                         lr=spec.encoder.lr,
                                         schedule="cosine", seed=seed),
                             whiten_scale=spec.encoder.whiten_scale)
    head_cfg = TrainConfig(epochs=spec.head.epochs, lr=spec.head.lr,
                           schedule=spec.head.schedule, seed=seed)
    train_feats = FeatureData(encode(f, train.X), train.y)
    val_feats = FeatureData(encode(f, val.X), val.y)
    clean_head = train_head_features(train_feats, head_cfg)
    clean_acc = accuracy_features(clean_head, FeatureData(encode(f, test.X), test.y))
    target = gradpc(f, clean_head, val_feats,
                    TargetSpec(eps_w=spec.target.eps_w, steps=spec.target.steps))
    return _Bench(encoder=f, train=train, test=test, val=val,
                  train_feats=train_feats, val_feats=val_feats,
                  clean_head=clean_head, clean_acc=clean_acc, target=target,
                  data_box=box)


def _resolve_box(name, bench):
    if name == "none":
        return None
    if name == "data":
        return bench.data_box
    if name == "clean-range":
        return (float(bench.train.X.min()), float(bench.train.X.max()))
    if name == "feature-range":
        return (bench.train_feats.Z.min(0), bench.train_feats.Z.max(0))
    raise ValueError(f"unknown box mode {name!r}")


def _run_cell(spec, bench, method, eps_d, seed):
    acfg_fields = dict(spec.attack_overrides(method))
    box_mode = acfg_fields.pop("box")
    eps_inf = acfg_fields.pop("eps_inf")
    acfg = AttackConfig(eps_d=eps_d, box=_resolve_box(box_mode, bench), **acfg_fields)
    rng = RngState(seed, STREAM_ATTACK)
    eval_cfg = TrainConfig(epochs=spec.eval.epochs, lr=spec.eval.lr,
                           schedule=spec.eval.schedule, seed=seed)
    defense = float(np.abs(bench.train.X).max()) if spec.eval.defense else None
    target = bench.target
    replace = False
    if method == "gc-feature":
        nu = gc_feature_attack(bench.train_feats, target, acfg, rng).nu
    elif method == "gc-input":
        nu = gc_input_attack(bench.train, bench.encoder, target, acfg, rng).nu
    elif method == "fm":
        nu = feature_matching_attack(bench.train, bench.encoder, target, acfg, rng).nu
    elif method == "tgda":
        nu = tgda_attack(bench.train, bench.val, bench.encoder, acfg, rng).nu
        target = None
    elif method == "emn":
        nu = emn_attack(bench.train, bench.encoder, acfg, eps_inf, rng)
        target = None
        replace = True
    elif method == "decoder-inv":
        zeta = gc_feature_attack(bench.train_feats, target, acfg, rng).nu
        dec = train_decoder(bench.encoder, bench.train, spec.decoder.dims,
                            TrainConfig(epochs=spec.decoder.epochs,
                                        lr=spec.decoder.lr,
                                        schedule="cosine", seed=seed))
        nu = decoder_invert(dec, zeta, bench.data_box)
    else:
        raise ValueError(f"unknown attack method {method!r}")
    rep = evaluate_poison(bench.encoder, bench.train, bench.test, nu=nu,
                          cfg=eval_cfg, target=target, defense_linf=defense,
                          replace=replace)
    rep.attack = method
    rep.eps_d = eps_d
    return rep


def run_experiment(spec):
    """Sweep attacks x eps_d x seeds; one EvalReport per cell, errors recorded."""
    reports = []
    bench_cache = {}
    for method in spec.attack.methods:
        for eps_d in spec.attack.eps_d:
            for seed in spec.attack.seeds:
                try:
                    if seed not in bench_cache:
                        bench_cache[seed] = _build_bench(spec, seed)
                    rep = _run_cell(spec, bench_cache[seed], method, eps_d, seed)
                except Exception as exc:
                    rep = EvalReport(clean_acc=0.0, poisoned_acc=0.0, drop=0.0,
                                     reach_gap=0.0, poison_linf=0.0, n_poison=0,
                                     n_removed_by_defense=0, seed=seed,
                                     attack=method, eps_d=eps_d, error=str(exc))
                reports.append(rep)
    return reports


def summarize(reports):
    """Mean and stddev of the drop per (attack, eps_d) over non-error seeds."""
    groups = {}
    for r in reports:
        if r.error:
            continue
        groups.setdefault((r.attack, r.eps_d), []).append(r.drop)
    out = []
    for (attack, eps_d), drops in sorted(groups.items()):
        arr = np.asarray(drops)
        out.append({"attack": attack, "eps_d": eps_d, "n_seeds": len(drops),
                    "mean_drop": float(arr.mean()), "std_drop": float(arr.std())})
    return out
