"""Pair-connectivity experiment: config, runner, and report writers.

A run trains (or loads) a classifier, draws same-class pairs, runs
:func:`~mepconnect.pathfind.connect_pair` for every pair at every requested
layer (the same pairs are reused across layers), and counts the verdicts.

Config files are INI (``configparser``); see ``configs/rings.ini`` in the
repository for every key with its default.
"""
import configparser
import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import CLASSIFIER_MAGIC, encode_layers, load_model
from .classifier import (
    Dataset,
    MlpModel,
    MlpSpec,
    TrainConfig,
    accuracy,
    init_model,
    make_dataset,
    predict_batch,
    train_adam,
)
from .errors import ConfigError, MepConnectError
from .pathfind import NebConfig, PairVerdict, PathState, Verdict, connect_pair

log = logging.getLogger(__name__)

VERDICT_COLUMNS = (
    (Verdict.LINEAR, "linear", "Linear path exists"),
    (Verdict.NONLINEAR, "nonlinear", "Nonlinear path exists"),
    (Verdict.NONE, "none", "No path exists"),
)


class ExperimentError(MepConnectError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "rings"
    n: int = 400
    seed: int = 3
    params: Tuple[Tuple[str, float], ...] = ()

    def build(self) -> Dataset:
        return make_dataset(self.kind, self.n, dict(self.params), self.seed)


@dataclass(frozen=True)
class DecoderRunConfig:
    layers: Tuple[int, ...] = ()
    hidden_dims: Tuple[int, ...] = (64, 64)
    epochs: int = 200
    learning_rate: float = 0.001
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    layer_dims: Tuple[int, ...] = (2, 32, 32, 2)
    model_seed: int = 1
    checkpoint: Optional[str] = None
    train: TrainConfig = TrainConfig()
    layers: Optional[Tuple[int, ...]] = None
    pair_count: int = 25
    target_class: Optional[int] = 1
    explicit_pairs: Tuple[Tuple[Tuple[float, ...], Tuple[float, ...]], ...] = ()
    neb: NebConfig = NebConfig()
    seed: int = 0
    jobs: int = 1
    decoder: DecoderRunConfig = DecoderRunConfig()
    profile_pair: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None

    def __post_init__(self):
        if self.pair_count < 1:
            raise ConfigError("pair_count must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def canonical(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _pair(text, where):
    vals = _floats(text)
    if len(vals) < 2 or len(vals) % 2:
        raise ConfigError(f"{where}: a pair needs an even number of coordinates, got {text!r}")
    half = len(vals) // 2
    return vals[:half], vals[half:]


def _typed(cls, section, where):
    """Build dataclass ``cls`` from an INI section, casting by field default type."""
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        default = getattr(cls(), key)
        try:
            if isinstance(default, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            elif isinstance(default, tuple):
                kwargs[key] = _ints(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from None
    try:
        return cls(**kwargs)
    except MepConnectError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}".replace("\n", " ")) from None
    allowed = {"dataset", "classifier", "train", "experiment", "neb", "decoder", "profile"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    kw = {}
    if cp.has_section("dataset"):
        sec = dict(cp["dataset"])
        ds = {}
        for key in ("kind",):
            if key in sec:
                ds[key] = sec.pop(key)
        for key in ("n", "seed"):
            if key in sec:
                ds[key] = int(sec.pop(key))
        ds["params"] = tuple(sorted((k, float(v)) for k, v in sec.items()))
        kw["dataset"] = DatasetConfig(**ds)
    if cp.has_section("classifier"):
        sec = cp["classifier"]
        for key in sec:
            if key not in ("layer_dims", "seed", "checkpoint"):
                raise ConfigError(f"unknown key {key!r} in [classifier]")
        if "layer_dims" in sec:
            kw["layer_dims"] = _ints(sec["layer_dims"])
        if "seed" in sec:
            kw["model_seed"] = int(sec["seed"])
        if sec.get("checkpoint", "").strip():
            kw["checkpoint"] = os.path.join(base_dir, sec["checkpoint"].strip())
    if cp.has_section("train"):
        kw["train"] = _typed(TrainConfig, cp["train"], "train")
    if cp.has_section("neb"):
        kw["neb"] = _typed(NebConfig, cp["neb"], "neb")
    if cp.has_section("decoder"):
        kw["decoder"] = _typed(DecoderRunConfig, cp["decoder"], "decoder")
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        for key in sec:
            if key not in ("layers", "pairs", "target_class", "explicit_pairs", "seed", "jobs"):
                raise ConfigError(f"unknown key {key!r} in [experiment]")
        if sec.get("layers", "").strip():
            kw["layers"] = _ints(sec["layers"])
        if "pairs" in sec:
            kw["pair_count"] = int(sec["pairs"])
        if "target_class" in sec:
            tc = sec["target_class"].strip()
            kw["target_class"] = None if tc == "any" else int(tc)
        if "seed" in sec:
            kw["seed"] = int(sec["seed"])
        if "jobs" in sec:
            kw["jobs"] = int(sec["jobs"])
        if "explicit_pairs" in sec:
            lines = [ln for ln in sec["explicit_pairs"].splitlines() if ln.strip()]
            kw["explicit_pairs"] = tuple(_pair(ln, "explicit_pairs") for ln in lines)
    if cp.has_section("profile"):
        sec = cp["profile"]
        if "x1" in sec and "x2" in sec:
            kw["profile_pair"] = (_floats(sec["x1"]), _floats(sec["x2"]))
    try:
        return ExperimentConfig(**kw)
    except (TypeError, MepConnectError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def model_hash(model: MlpModel) -> str:
    return hashlib.sha256(encode_layers(CLASSIFIER_MAGIC, model.layers)).hexdigest()


def resolve_model(config: ExperimentConfig, data: Dataset):
    """Load the configured checkpoint or train a fresh model.

    Returns ``(model, loss_trace)``; the trace is empty for loaded models.
    """
    if config.checkpoint:
        try:
            return load_model(config.checkpoint), []
        except OSError as exc:
            raise ExperimentError(f"unresolvable checkpoint {config.checkpoint}: {exc.strerror}") from None
    model = init_model(MlpSpec(config.layer_dims, config.model_seed))
    return train_adam(model, data, config.train)


def default_layers(model: MlpModel):
    """Input space, first hidden layer, last hidden layer (deduplicated)."""
    out = []
    for l in (0, min(1, model.num_hidden), model.num_hidden):
        if l not in out:
            out.append(l)
    return tuple(out)


@dataclass
class PairSpec:
    index: int
    x1: np.ndarray
    x2: np.ndarray
    target: int
    source: str


def sample_pairs(model: MlpModel, data: Dataset, config: ExperimentConfig,
                 count: Optional[int] = None) -> List[PairSpec]:
    """Draw same-class pairs whose endpoints the model classifies correctly.

    Explicit pairs from the config come first. Random pairs are drawn
    uniformly among points of the chosen class; pairs with a misclassified
    endpoint are rejected and redrawn.
    """
    count = config.pair_count if count is None else count
    rng = np.random.default_rng(config.seed)
    K = model.class_count
    pred, _ = predict_batch(model, data.points)
    budget = 100 * count
    rejected = 0
    pairs = []

    def reject(reason):
        nonlocal rejected
        rejected += 1
        log.info("rejected pair: %s", reason)
        if rejected > budget:
            raise ExperimentError(f"pair resampling exhausted after {rejected} rejections")

    for a, b in config.explicit_pairs:
        if len(pairs) == count:
            break
        x1, x2 = np.array(a), np.array(b)
        if x1.shape != (model.input_dim,) or x2.shape != (model.input_dim,):
            raise ConfigError(f"explicit pair has wrong dimension for input dim {model.input_dim}")
        c, _ = predict_batch(model, np.vstack([x1, x2]))
        target = c[0] if config.target_class is None else config.target_class
        if c[0] != target or c[1] != target:
            reject(f"explicit pair predicted {c.tolist()}, target {target}")
            continue
        pairs.append(PairSpec(len(pairs), x1, x2, int(target), "explicit"))
    while len(pairs) < count:
        target = int(rng.integers(K)) if config.target_class is None else config.target_class
        idx = np.flatnonzero(data.labels == target)
        if len(idx) < 2:
            raise ExperimentError(f"class {target} has fewer than two points")
        i, j = rng.choice(idx, 2, replace=False)
        if pred[i] != target or pred[j] != target:
            reject(f"points {i}, {j} predicted {int(pred[i])}, {int(pred[j])}, label {target}")
            continue
        pairs.append(PairSpec(len(pairs), data.points[i].copy(), data.points[j].copy(),
                              target, f"sampled:{i}:{j}"))
    return pairs


def _connect_task(args):
    model, layer, pair, neb = args
    return connect_pair(model, layer, pair.x1, pair.x2, neb, target=pair.target)


@dataclass
class ExperimentReport:
    layers: Tuple[int, ...]
    pair_count: int
    counts: Dict[int, Dict[str, int]]
    pairs: List[PairSpec]
    verdicts: Dict[Tuple[int, int], PairVerdict]
    provenance: dict
    train_accuracy: float = float("nan")
    train_trace: List[float] = field(default_factory=list)

    def recount(self) -> Dict[int, Dict[str, int]]:
        out = {l: {key: 0 for _, key, _ in VERDICT_COLUMNS} for l in self.layers}
        names = {v: key for v, key, _ in VERDICT_COLUMNS}
        for (l, _), v in self.verdicts.items():
            out[l][names[v.verdict]] += 1
        return out

    def summaries(self) -> List[dict]:
        rows = []
        for (l, k), v in sorted(self.verdicts.items()):
            p = self.pairs[k]
            rows.append({
                "layer": l,
                "pair": k,
                "source": p.source,
                "target": v.target,
                "x1": p.x1.tolist(),
                "x2": p.x2.tolist(),
                "verdict": v.verdict.value,
                "iterations_used": v.iterations_used,
                "stop_reason": v.stop_reason,
                "max_energy_initial": v.max_energy_initial,
                "max_energy_final": v.max_energy_final,
                "profile_file": profile_name(l, k),
            })
        return rows


def profile_name(layer, pair):
    return os.path.join("profiles", f"layer{layer}_pair{pair:02d}.csv")


def path_name(layer, pair):
    return os.path.join("paths", f"layer{layer}_pair{pair:02d}.csv")


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None,
                   model: Optional[MlpModel] = None) -> ExperimentReport:
    data = config.dataset.build()
    trace = []
    if model is None:
        model, trace = resolve_model(config, data)
    layers = config.layers if config.layers is not None else default_layers(model)
    for l in layers:
        if not 0 <= l <= model.num_hidden:
            raise ExperimentError(f"invalid layer index {l}; model has {model.num_hidden} hidden layers")
    if model.input_dim != data.points.shape[1]:
        raise ExperimentError(
            f"model input dim {model.input_dim} does not match dataset dim {data.points.shape[1]}"
        )
    pairs = sample_pairs(model, data, config)
    tasks = [(l, p) for l in layers for p in pairs]
    args = [(model, l, p, config.neb) for l, p in tasks]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            results = list(pool.map(_connect_task, args))
    else:
        results = [_connect_task(a) for a in args]
    verdicts = {(l, p.index): v for (l, p), v in zip(tasks, results)}
    provenance = {
        "config_hash": config.config_hash(),
        "model_hash": model_hash(model),
        "checkpoint": config.checkpoint,
        "dataset_seed": config.dataset.seed,
        "model_seed": config.model_seed,
        "train_seed": config.train.seed,
        "pair_seed": config.seed,
    }
    report = ExperimentReport(tuple(layers), len(pairs), {}, pairs, verdicts, provenance,
                              accuracy(model, data), list(trace))
    report.counts = report.recount()
    if out_dir is not None:
        write_report(report, out_dir, model)
    return report


# --------------------------------------------------------------------------
# writers
# --------------------------------------------------------------------------


def _check_counts(report: ExperimentReport):
    for l in report.layers:
        total = sum(report.counts[l].values())
        if total != report.pair_count:
            raise ExperimentError(f"layer {l} counts sum to {total}, expected {report.pair_count}")
    if report.recount() != report.counts:
        raise ExperimentError("report counts disagree with stored verdicts")


def layer_label(layer: int, num_hidden: Optional[int] = None) -> str:
    if layer == 0:
        return "Original"
    if num_hidden is not None and layer == num_hidden:
        return f"Last layer ({layer})"
    return f"Layer {layer}"


def render_table(report: ExperimentReport, num_hidden: Optional[int] = None) -> str:
    """Aligned text table: one row per verdict kind, one column per layer."""
    heads = [""] + [layer_label(l, num_hidden) for l in report.layers]
    rows = [heads]
    for _, key, label in VERDICT_COLUMNS:
        rows.append([label] + [str(report.counts[l][key]) for l in report.layers])
    widths = [max(len(r[c]) for r in rows) for c in range(len(heads))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def emit_connectivity_table(report: ExperimentReport, path, num_hidden: Optional[int] = None):
    """CSV ``layer,linear,nonlinear,none`` plus a ``.txt`` rendering next to it."""
    _check_counts(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer"] + [key for _, key, _ in VERDICT_COLUMNS])
    for l in report.layers:
        w.writerow([l] + [report.counts[l][key] for _, key, _ in VERDICT_COLUMNS])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    with open(os.path.splitext(path)[0] + ".txt", "w") as fh:
        fh.write(render_table(report, num_hidden))


def _fmt(x) -> str:
    return f"{x:.12g}"


def emit_path_profile_csv(verdict: PairVerdict, path):
    """Per-sample class probabilities for the linear and final paths."""
    K = verdict.linear_profile.probs.shape[1]
    header = ["block", "t"] + [f"class_{k}_prob" for k in range(K)] + ["argmax", "is_target"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for block, prof in (("linear", verdict.linear_profile), ("final", verdict.final_profile)):
            for t, p, c in zip(prof.t, prof.probs, prof.classes):
                w.writerow([block, _fmt(t)] + [_fmt(v) for v in p]
                           + [int(c), int(c == prof.target)])


def read_profile_csv(path):
    """Parse a profile CSV into ``{block: (t, probs, argmax, is_target)}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    K = sum(1 for h in header if h.startswith("class_"))
    out = {}
    for block in ("linear", "final"):
        sel = [r for r in body if r[0] == block]
        t = np.array([float(r[1]) for r in sel])
        probs = np.array([[float(v) for v in r[2:2 + K]] for r in sel]).reshape(-1, K)
        arg = np.array([int(r[2 + K]) for r in sel], dtype=int)
        is_t = np.array([r[3 + K] == "1" for r in sel], dtype=bool)
        out[block] = (t, probs, arg, is_t)
    return out


def write_path_file(path_state: PathState, path):
    """Pivot coordinates as CSV; the first line records the layer index."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# layer_index={path_state.layer_index}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i"] + [f"z{j}" for j in range(path_state.dim)])
        for i, row in enumerate(path_state.points):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_path_file(path) -> PathState:
    try:
        with open(path, newline="") as fh:
            first = fh.readline()
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read path file {path}: {exc.strerror}") from None
    if not first.startswith("# layer_index="):
        raise ConfigError(f"{path}: missing '# layer_index=' header line")
    layer = int(first.split("=", 1)[1])
    pts = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return PathState(pts, layer)


def write_report(report: ExperimentReport, out_dir, model: MlpModel):
    os.makedirs(os.path.join(out_dir, "profiles"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "paths"), exist_ok=True)
    emit_connectivity_table(report, os.path.join(out_dir, "connectivity.csv"), model.num_hidden)
    for (l, k), v in sorted(report.verdicts.items()):
        emit_path_profile_csv(v, os.path.join(out_dir, profile_name(l, k)))
        write_path_file(v.final_path, os.path.join(out_dir, path_name(l, k)))
    doc = {
        "layers": list(report.layers),
        "pair_count": report.pair_count,
        "counts": {str(l): report.counts[l] for l in report.layers},
        "train_accuracy": report.train_accuracy,
        "provenance": report.provenance,
        "pairs": report.summaries(),
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
