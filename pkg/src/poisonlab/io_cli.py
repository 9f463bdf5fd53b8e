"""File formats, synthetic data, experiment configs, report emission, CLI.

Binary layouts are little-endian with magic tags so a wrong or damaged file
is rejected with a specific message instead of producing garbage numbers.
Config parsing is strict: an unknown key is an error, never a silent default.
"""

import argparse
import csv
import dataclasses
import json
import struct
import sys
import types
import zlib
from dataclasses import dataclass, field

import numpy as np

from .harness import (EvalReport, evaluate_poison, run_experiment,
                      split_interleaved, summarize, _resolve_box)
from .attacks import (AttackConfig, decoder_invert, emn_attack,
                      feature_matching_attack, gc_feature_attack, gc_input_attack,
                      tgda_attack)
from .model import Encoder, FeatureData, LabeledData, LinearHead, encode
from .numkit import STREAM_ATTACK, STREAM_DATA, RngState
from .targets import TargetSpec, gradpc
from .trainer import TrainConfig, pretrain_encoder, train_decoder, train_head

DS_MAGIC = b"PLABDS01"
MD_MAGIC = b"PLABMD01"

ATTACK_METHODS = ("gc-input", "gc-feature", "tgda", "fm", "emn", "decoder-inv")
BOX_MODES = ("none", "data", "clean-range", "feature-range")
SCHEDULES = ("constant", "cosine")


class FileFormatError(ValueError):
    """A dataset, model, or report file failed structural validation."""


# ---------------------------------------------------------------- data gen

def gen_blobs(rng, n, d, c, separation, box, sigma=1.0):
    """Balanced Gaussian clusters with means on a rotated circle.

    The c means sit on a circle whose radius makes adjacent means exactly
    `separation` apart, embedded in the first two coordinates and then
    rotated by a random orthogonal matrix. Rows are shuffled and clipped
    to the box.
    """
    if c < 2:
        raise ValueError("at least 2 classes required")
    if d < 2:
        raise ValueError("at least 2 dimensions required")
    if n < 1:
        raise ValueError("at least 1 row required")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not box[0] <= box[1]:
        raise ValueError(f"box {box} has lo > hi")
    base = np.zeros((c, d))
    r = separation / (2.0 * np.sin(np.pi / c))
    for k in range(c):
        base[k, 0] = r * np.cos(2 * np.pi * k / c)
        base[k, 1] = r * np.sin(2 * np.pi * k / c)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    means = base @ Q.T
    counts = np.full(c, n // c)
    counts[: n % c] += 1
    X = np.vstack([means[k] + sigma * rng.standard_normal((counts[k], d))
                   for k in range(c)])
    y = np.repeat(np.arange(c), counts)
    idx = rng.permutation(n)
    return LabeledData(np.clip(X[idx], box[0], box[1]), y[idx])


# ---------------------------------------------------------------- binary IO

def write_dataset(path, data, n_classes):
    X = np.ascontiguousarray(data.X, dtype="<f8")
    y = np.asarray(data.y)
    if y.size and (int(y.min()) < 0 or int(y.max()) >= n_classes):
        raise ValueError(f"label out of range: labels must lie in [0, {n_classes})")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(DS_MAGIC)
        fh.write(struct.pack("<III", n, d, n_classes))
        fh.write(X.tobytes(order="C"))
        fh.write(np.ascontiguousarray(y, dtype="<u4").tobytes())


def read_dataset(path):
    """Returns (LabeledData, n_classes)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:8] != DS_MAGIC:
        raise FileFormatError(f"bad magic {blob[:8]!r}: not a dataset file")
    if len(blob) < 20:
        raise FileFormatError("truncated dataset file: header incomplete")
    n, d, c = struct.unpack("<III", blob[8:20])
    expected = 20 + 8 * n * d + 4 * n
    if len(blob) != expected:
        raise FileFormatError(f"truncated dataset file: {len(blob)} bytes, expected {expected}")
    X = np.frombuffer(blob, dtype="<f8", count=n * d, offset=20)
    X = X.reshape(n, d).astype(np.float64)
    y = np.frombuffer(blob, dtype="<u4", count=n, offset=20 + 8 * n * d)
    y = y.astype(np.int64)
    if y.size and int(y.max()) >= c:
        raise FileFormatError(f"label out of range: max label {int(y.max())} with {c} classes")
    return LabeledData(X, y), c


def write_model(path, model):
    dims = model.dims
    nl = len(model.weights)
    parts = [struct.pack("<I", nl), struct.pack(f"<{nl + 1}I", *dims)]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes(order="C"))
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(MD_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:8] != MD_MAGIC:
        raise FileFormatError(f"bad magic {blob[:8]!r}: not a model file")
    if len(blob) < 16:
        raise FileFormatError("truncated model file: header incomplete")
    payload = blob[8:-4]
    nl = struct.unpack("<I", payload[:4])[0]
    if nl < 1 or len(payload) < 4 + 4 * (nl + 1):
        raise FileFormatError("truncated model file: dimension table incomplete")
    dims = struct.unpack(f"<{nl + 1}I", payload[4:4 + 4 * (nl + 1)])
    expected = 4 + 4 * (nl + 1) + sum(8 * dims[i] * dims[i + 1] + 8 * dims[i + 1]
                                      for i in range(nl))
    if len(payload) != expected:
        raise FileFormatError(f"truncated model file: payload {len(payload)} bytes, expected {expected}")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != stored:
        raise FileFormatError("checksum mismatch: model file corrupted")
    ws, bs = [], []
    off = 4 + 4 * (nl + 1)
    for i in range(nl):
        cnt = dims[i] * dims[i + 1]
        w = np.frombuffer(payload, dtype="<f8", count=cnt, offset=off)
        ws.append(w.reshape(dims[i], dims[i + 1]).astype(np.float64))
        off += 8 * cnt
        b = np.frombuffer(payload, dtype="<f8", count=dims[i + 1], offset=off)
        bs.append(b.astype(np.float64))
        off += 8 * dims[i + 1]
    return Encoder(tuple(ws), tuple(bs))


def _head_to_model(head):
    # single-layer model file; stored input-major, so transpose
    return Encoder((head.W.T.copy(),), (head.b.copy(),))


def _model_to_head(model):
    if len(model.weights) != 1:
        raise FileFormatError(f"expected a single-layer head model, got {len(model.weights)} layers")
    return LinearHead(model.weights[0].T.copy(), model.biases[0].copy())


def import_csv(path):
    """Strict header `x0,...,x{d-1},label`; returns LabeledData."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FileFormatError("empty csv file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header != [f"x{i}" for i in range(d)] + ["label"]:
        raise FileFormatError(f"bad csv header {','.join(header)!r}: expected x0,...,x{{d-1}},label")
    Xs, ys = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise FileFormatError(f"csv row {ln}: {len(row)} fields, expected {d + 1}")
        try:
            Xs.append([float(v) for v in row[:d]])
            lab = int(row[d])
        except ValueError:
            raise FileFormatError(f"csv row {ln}: non-numeric field") from None
        if lab < 0:
            raise FileFormatError(f"csv row {ln}: negative label")
        ys.append(lab)
    return LabeledData(np.asarray(Xs, dtype=np.float64).reshape(len(Xs), d),
                       np.asarray(ys, dtype=np.int64))


# ---------------------------------------------------------------- config

@dataclass
class DataSection:
    path: str = ""
    n: int = 2400
    d: int = 8
    c: int = 3
    separation: float = 2.1
    sigma: float = 1.0
    box_lo: float = -9.0
    box_hi: float = 9.0


@dataclass
class EncoderSection:
    path: str = ""
    dims: tuple = (8, 16, 4)
    epochs: int = 120
    lr: float = 0.12
    whiten_scale: float = 3.0


@dataclass
class HeadSection:
    epochs: int = 100
    lr: float = 0.7
    schedule: str = "constant"


@dataclass
class TargetSection:
    eps_w: float = 1.0
    steps: int = 25


@dataclass
class AttackSection:
    methods: tuple = ("gc-feature",)
    eps_d: tuple = (0.1,)
    seeds: tuple = (0, 1, 2, 3, 4)
    eta: float = 0.1
    epochs: int = 2000
    gamma: float = 1.0
    beta: float = 0.25
    stop_residual: float = 1e-8
    k: int = 1
    s: int = 50
    t: int = 2000
    use_optional_refinement: bool = False
    constrained: bool = False
    box: str = "feature-range"
    eps_inf: float = 8.0 / 255.0 * 18.0  # 8/255 of the default data range


@dataclass
class DecoderSection:
    dims: tuple = (4, 16, 8)
    epochs: int = 800
    lr: float = 0.05


@dataclass
class EvalSection:
    epochs: int = 100
    lr: float = 0.7
    schedule: str = "constant"
    defense: bool = False


# per-attack sections may override these AttackSection keys
_OVERRIDE_KEYS = ("eta", "epochs", "gamma", "beta", "stop_residual", "k", "s",
                  "t", "use_optional_refinement", "constrained", "box", "eps_inf")


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    head: HeadSection = field(default_factory=HeadSection)
    target: TargetSection = field(default_factory=TargetSection)
    attack: AttackSection = field(default_factory=AttackSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    eval: EvalSection = field(default_factory=EvalSection)
    overrides: dict = field(default_factory=dict)

    def attack_overrides(self, method):
        merged = {k: getattr(self.attack, k) for k in _OVERRIDE_KEYS}
        merged.update(self.overrides.get(method, {}))
        return merged


def _as_bool(s):
    v = {"true": True, "false": False}.get(s.lower())
    if v is None:
        raise ValueError(f"expected true/false, got {s!r}")
    return v


def _as_ints(s):
    return tuple(int(t.strip()) for t in s.split(","))


def _as_floats(s):
    return tuple(float(t.strip()) for t in s.split(","))


def _as_strs(s):
    return tuple(t.strip() for t in s.split(","))


_SECTION_FIELDS = {
    "data": {"path": str, "n": int, "d": int, "c": int, "separation": float,
             "sigma": float, "box_lo": float, "box_hi": float},
    "encoder": {"path": str, "dims": _as_ints, "epochs": int, "lr": float,
                "whiten_scale": float},
    "head": {"epochs": int, "lr": float, "schedule": str},
    "target": {"eps_w": float, "steps": int},
    "attack": {"methods": _as_strs, "eps_d": _as_floats, "seeds": _as_ints,
               "eta": float, "epochs": int, "gamma": float, "beta": float,
               "stop_residual": float, "k": int, "s": int, "t": int,
               "use_optional_refinement": _as_bool, "constrained": _as_bool,
               "box": str, "eps_inf": float},
    "decoder": {"dims": _as_ints, "epochs": int, "lr": float},
    "eval": {"epochs": int, "lr": float, "schedule": str, "defense": _as_bool},
}


def parse_config(text):
    cfg = ExperimentConfig()
    section = None
    override_method = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name.startswith("attack."):
                method = name[len("attack."):]
                if method not in ATTACK_METHODS:
                    raise ValueError(f"line {ln}: unknown attack {method!r} in section header")
                section, override_method = "attack-override", method
                cfg.overrides.setdefault(method, {})
            elif name in _SECTION_FIELDS:
                section, override_method = name, None
            else:
                raise ValueError(f"line {ln}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value")
        if section is None:
            raise ValueError(f"line {ln}: key outside any section")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if section == "attack-override":
            if key not in _OVERRIDE_KEYS:
                raise ValueError(f"line {ln}: unknown key {key!r} in section [attack.{override_method}]")
            conv = _SECTION_FIELDS["attack"][key]
        else:
            fields = _SECTION_FIELDS[section]
            if key not in fields:
                raise ValueError(f"line {ln}: unknown key {key!r} in section [{section}]")
            conv = fields[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ValueError(f"line {ln}: bad value for {key!r}: {exc}") from None
        if section == "attack-override":
            cfg.overrides[override_method][key] = parsed
        else:
            setattr(getattr(cfg, section), key, parsed)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    for m in cfg.attack.methods:
        if m not in ATTACK_METHODS:
            raise ValueError(f"unknown attack method {m!r}")
    boxes = [cfg.attack.box] + [ov["box"] for ov in cfg.overrides.values() if "box" in ov]
    for bx in boxes:
        if bx not in BOX_MODES:
            raise ValueError(f"unknown box mode {bx!r}")
    for sched in (cfg.head.schedule, cfg.eval.schedule):
        if sched not in SCHEDULES:
            raise ValueError(f"unknown schedule {sched!r}")


def read_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _render_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_render_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def default_config_text():
    cfg = ExperimentConfig()
    lines = []
    for name in ("data", "encoder", "head", "target", "attack", "decoder", "eval"):
        lines.append(f"[{name}]")
        for f_ in dataclasses.fields(getattr(cfg, name)):
            lines.append(f"{f_.name} = {_render_value(getattr(getattr(cfg, name), f_.name))}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- reports

_JSON_KEYS = ("attack", "eps_d", "seed", "clean_acc", "poisoned_acc", "drop",
              "reach_gap", "poison_linf", "n_poison", "n_removed_by_defense",
              "error")
_CSV_KEYS = ("attack", "eps_d", "seed", "clean_acc", "poisoned_acc", "drop",
             "reach_gap", "poison_linf")
_INT_KEYS = ("seed", "n_poison", "n_removed_by_defense")


def _g17(v):
    return format(float(v), ".17g")


def emit_report(reports, jsonl_path, csv_path):
    """Line-delimited JSON records plus a CSV grid of the non-error cells."""
    if not reports:
        raise ValueError("empty report list")
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            rec = {}
            for k in _JSON_KEYS:
                v = getattr(r, k)
                if k in ("attack", "error"):
                    rec[k] = str(v)
                elif k in _INT_KEYS:
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            fh.write(json.dumps(rec) + "\n")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_CSV_KEYS) + "\n")
        for r in reports:
            if r.error:
                continue
            cells = [r.attack, _g17(r.eps_d), str(int(r.seed)),
                     _g17(r.clean_acc), _g17(r.poisoned_acc), _g17(r.drop),
                     _g17(r.reach_gap), _g17(r.poison_linf)]
            fh.write(",".join(cells) + "\n")


def load_reports(path):
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            reports.append(EvalReport(
                clean_acc=rec["clean_acc"], poisoned_acc=rec["poisoned_acc"],
                drop=rec["drop"], reach_gap=rec["reach_gap"],
                poison_linf=rec["poison_linf"], n_poison=rec["n_poison"],
                n_removed_by_defense=rec["n_removed_by_defense"],
                seed=rec["seed"], attack=rec["attack"], eps_d=rec["eps_d"],
                error=rec["error"]))
    return reports


# ---------------------------------------------------------------- CLI

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _load_cli_config(args):
    if getattr(args, "config", None):
        return read_config(args.config)
    return ExperimentConfig()


def _pick(flag, fallback):
    return fallback if flag is None else flag


def _cmd_gen_data(args):
    sec = _load_cli_config(args).data
    n = _pick(args.n, sec.n)
    d = _pick(args.d, sec.d)
    c = _pick(args.c, sec.c)
    sep = _pick(args.separation, sec.separation)
    sigma = _pick(args.sigma, sec.sigma)
    box = (_pick(args.box_lo, sec.box_lo), _pick(args.box_hi, sec.box_hi))
    data = gen_blobs(RngState(args.seed, STREAM_DATA), n, d, c, sep, box, sigma=sigma)
    write_dataset(args.out, data, c)
    return 0


def _cmd_pretrain(args):
    sec = _load_cli_config(args).encoder
    data, _c = read_dataset(args.data)
    train, _, _ = split_interleaved(data)
    cfg = TrainConfig(epochs=_pick(args.epochs, sec.epochs),
                      lr=_pick(args.lr, sec.lr), schedule="cosine",
                      seed=args.seed)
    f = pretrain_encoder(train, _pick(args.dims, sec.dims), cfg,
                         whiten_scale=_pick(args.whiten_scale, sec.whiten_scale))
    write_model(args.out, f)
    return 0


def _cmd_train_head(args):
    sec = _load_cli_config(args).head
    data, c = read_dataset(args.data)
    enc = read_model(args.encoder)
    train, _, _ = split_interleaved(data)
    cfg = TrainConfig(epochs=_pick(args.epochs, sec.epochs),
                      lr=_pick(args.lr, sec.lr),
                      schedule=_pick(args.schedule, sec.schedule),
                      seed=args.seed)
    head = train_head(enc, train, cfg, n_classes=c)
    write_model(args.out, _head_to_model(head))
    return 0


def _cmd_gradpc(args):
    sec = _load_cli_config(args).target
    data, _c = read_dataset(args.data)
    enc = read_model(args.encoder)
    head = _model_to_head(read_model(args.head))
    _, _, val = split_interleaved(data)
    spec = TargetSpec(eps_w=_pick(args.eps_w, sec.eps_w),
                      steps=_pick(args.steps, sec.steps))
    write_model(args.out, _head_to_model(gradpc(enc, head, val, spec)))
    return 0


def _attack_config(args, cfg, train, train_feats, data_box):
    ov = cfg.attack_overrides(args.method)
    box_mode = _pick(args.box, ov["box"])
    bench = types.SimpleNamespace(train=train, train_feats=train_feats,
                                  data_box=data_box)
    acfg = AttackConfig(
        eps_d=_pick(args.eps_d, cfg.attack.eps_d[0]),
        eta=_pick(args.eta, ov["eta"]),
        epochs=_pick(args.epochs, ov["epochs"]),
        gamma=_pick(args.gamma, ov["gamma"]),
        beta=_pick(args.beta, ov["beta"]),
        box=_resolve_box(box_mode, bench),
        stop_residual=_pick(args.stop_residual, ov["stop_residual"]),
        k=_pick(args.k, ov["k"]),
        s=_pick(args.s, ov["s"]),
        t=_pick(args.t, ov["t"]),
        use_optional_refinement=args.refine or ov["use_optional_refinement"],
        constrained=args.constrained or ov["constrained"])
    return acfg, _pick(args.eps_inf, ov["eps_inf"])


def _cmd_attack(args):
    cfg = _load_cli_config(args)
    data, c = read_dataset(args.data)
    enc = read_model(args.encoder)
    train, _test, val = split_interleaved(data)
    train_feats = FeatureData(encode(enc, train.X), train.y)
    data_box = (cfg.data.box_lo, cfg.data.box_hi)
    acfg, eps_inf = _attack_config(args, cfg, train, train_feats, data_box)
    rng = RngState(args.seed, STREAM_ATTACK)
    needs_target = args.method in ("gc-input", "gc-feature", "fm", "decoder-inv")
    if needs_target and not args.head:
        raise _UsageError(f"--method {args.method} requires --head (target parameters)")
    target = _model_to_head(read_model(args.head)) if needs_target else None
    if args.method == "gc-feature":
        nu = gc_feature_attack(train_feats, target, acfg, rng).nu
        rows, labels = nu.Z, nu.y
    elif args.method == "gc-input":
        nu = gc_input_attack(train, enc, target, acfg, rng).nu
        rows, labels = nu.X, nu.y
    elif args.method == "fm":
        nu = feature_matching_attack(train, enc, target, acfg, rng).nu
        rows, labels = nu.X, nu.y
    elif args.method == "tgda":
        nu = tgda_attack(train, val, enc, acfg, rng).nu
        rows, labels = nu.X, nu.y
    elif args.method == "emn":
        nu = emn_attack(train, enc, acfg, eps_inf, rng)
        rows, labels = nu.X, nu.y
    else:  # decoder-inv
        zeta = gc_feature_attack(train_feats, target, acfg, rng).nu
        dec = train_decoder(enc, train, cfg.decoder.dims,
                            TrainConfig(epochs=cfg.decoder.epochs,
                                        lr=cfg.decoder.lr, schedule="cosine",
                                        seed=args.seed))
        nu = decoder_invert(dec, zeta, data_box)
        rows, labels = nu.X, nu.y
    write_dataset(args.out, LabeledData(rows, labels), c)
    return 0


def _cmd_evaluate(args):
    cfg = _load_cli_config(args)
    data, _c = read_dataset(args.data)
    enc = read_model(args.encoder)
    train, test, _val = split_interleaved(data)
    poison, _pc = read_dataset(args.poison)
    if poison.X.shape[1] == data.X.shape[1]:
        nu = poison
    else:  # row width matches the feature space, not the input space
        nu = FeatureData(poison.X, poison.y)
    target = _model_to_head(read_model(args.target)) if args.target else None
    tc = TrainConfig(epochs=_pick(args.epochs, cfg.eval.epochs),
                     lr=_pick(args.lr, cfg.eval.lr),
                     schedule=_pick(args.schedule, cfg.eval.schedule),
                     seed=args.seed)
    defense = float(np.abs(train.X).max()) if (args.defense or cfg.eval.defense) else None
    rep = evaluate_poison(enc, train, test, nu=nu, cfg=tc, target=target,
                          defense_linf=defense, replace=args.replace)
    rep.attack = args.label
    rep.eps_d = args.eps_d
    emit_report([rep], args.out + ".jsonl", args.out + ".csv")
    print(f"{rep.attack}: clean {rep.clean_acc:.4f} poisoned {rep.poisoned_acc:.4f} "
          f"drop {rep.drop:.4f} reach_gap {rep.reach_gap:.6f}")
    return 0


def _cmd_sweep(args):
    spec = read_config(args.config)
    reports = run_experiment(spec)
    emit_report(reports, args.out + ".jsonl", args.out + ".csv")
    for row in summarize(reports):
        print(f"{row['attack']} eps_d={row['eps_d']:g}: mean_drop={row['mean_drop']:.6f} "
              f"std={row['std_drop']:.6f} over {row['n_seeds']} seeds")
    return 0


def _cmd_report(args):
    if args.show_config:
        print(default_config_text())
        return 0
    if not args.infile:
        raise _UsageError("report requires --show-config or --in")
    for row in summarize(load_reports(args.infile)):
        print(f"{row['attack']} eps_d={row['eps_d']:g}: mean_drop={row['mean_drop']:.6f} "
              f"std={row['std_drop']:.6f} over {row['n_seeds']} seeds")
    return 0


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)


def _build_parser():
    parser = _Parser(prog="poisonlab", description="data poisoning lab CLI")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic blob dataset")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--c", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--box-lo", type=float, default=None)
    p.add_argument("--box-hi", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain an encoder on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--dims", type=_as_ints, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--whiten-scale", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train-head", help="train a softmax head on frozen features")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--schedule", choices=SCHEDULES, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train_head)

    p = sub.add_parser("gradpc", help="build a target head by projected ascent")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--eps-w", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_gradpc)

    p = sub.add_parser("attack", help="craft a poison set")
    p.add_argument("--method", required=True, choices=ATTACK_METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--head", default=None, help="target parameters (model file)")
    p.add_argument("--eps-d", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--stop-residual", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--box", choices=BOX_MODES, default=None)
    p.add_argument("--eps-inf", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("evaluate", help="retrain on clean+poison and report")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--poison", required=True)
    p.add_argument("--target", default=None, help="target parameters for reach_gap")
    p.add_argument("--label", default="attack", help="attack name column value")
    p.add_argument("--eps-d", type=float, default=0.0, help="eps_d column value")
    p.add_argument("--defense", action="store_true")
    p.add_argument("--replace", action="store_true",
                   help="train on the poison rows alone (full-perturbation)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--schedule", choices=SCHEDULES, default=None)
    p.add_argument("--out", required=True, help="report path prefix")
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run a config-driven experiment grid")
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="summarize reports or show defaults")
    p.add_argument("--show-config", action="store_true")
    p.add_argument("--in", dest="infile", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_report)
    return parser


def cli(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else int(exc.code)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    return cli(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
