"""Measurement protocol and selection rules.

For every initialisation of an architecture the network is Kaiming-sampled
with a seed derived from ``(master seed, arch string, init index)``, fed the
same ``B`` batches, and the pooled features are concatenated into a single
cloud, centred once, and measured. Per-measure means and standard deviations
over initialisations form the :class:`MeasureVector`; rules act on the means.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from nasgeom import rng
from nasgeom.geometry import center
from nasgeom.idest import ESTIMATORS, EstimatorParams, estimate_all
from nasgeom.netlab import (
    CellSpec,
    ImageBatch,
    InitSpec,
    NetworkConfig,
    build_network,
    format_arch_string,
    forward_features,
    kaiming_init,
    parse_arch_string,
)
from nasgeom.ortho import centroid_angle_stats, pairwise_angle_stats
from nasgeom.synth import synth_images

ORTHO_MEASURES = ("f_mean", "f_std", "cmean", "cstd")
ALL_MEASURES = ORTHO_MEASURES + ESTIMATORS

DataSource = Callable[[int, int], ImageBatch]


class RuleError(KeyError):
    pass


@dataclass(frozen=True)
class ScoreConfig:
    inits: int = 3
    batches: int = 1
    batch_size: int = 64
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    gain: float = math.sqrt(2.0)
    bias: bool = True
    measures: tuple[str, ...] = ALL_MEASURES
    params: EstimatorParams = field(default_factory=EstimatorParams)
    mode: str = "concat"

    def __post_init__(self):
        if self.inits < 1 or self.batches < 1:
            raise ValueError("inits and batches must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.mode not in ("concat", "per_batch"):
            raise ValueError("mode must be 'concat' or 'per_batch'")
        unknown = set(self.measures) - set(ALL_MEASURES)
        if unknown:
            raise ValueError(f"unknown measures: {sorted(unknown)}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["measures"] = list(self.measures)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class SyntheticImages:
    """Data source of seeded uniform-noise batches (labels cycle over 10 classes)."""

    def __init__(self, seed: int = 0, shape: tuple[int, int, int] = (3, 32, 32)):
        self.seed = seed
        self.shape = tuple(shape)

    def __call__(self, index: int, size: int) -> ImageBatch:
        return synth_images(size, self.shape, rng.derive_seed(self.seed, "batch", index))

    def describe(self) -> dict:
        return {"kind": "synthetic", "seed": self.seed, "shape": list(self.shape)}


@dataclass
class MeasureStat:
    mean: float | None
    std: float | None
    values: list[float | None]
    status: str = "ok"
    errors: list[str] = field(default_factory=list)


@dataclass
class ArchScore:
    arch: str
    measures: dict[str, MeasureStat]
    provenance: dict
    verdicts: dict[str, bool] = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)

    def mean(self, name: str) -> float | None:
        return self.measures[name].mean

    def hard_failures(self) -> list[str]:
        """Measures that raised on at least one initialisation (degenerate statuses excluded)."""
        return sorted(n for n, m in self.measures.items() if any(e.startswith("error") for e in m.errors))

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "arch": self.arch,
            "measures": {k: asdict(v) for k, v in self.measures.items()},
            "verdicts": dict(self.verdicts),
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchScore":
        if d.get("schema") != 1:
            raise ValueError(f"unsupported score schema {d.get('schema')!r}")
        measures = {k: MeasureStat(**v) for k, v in d["measures"].items()}
        return cls(d["arch"], measures, d.get("provenance", {}), dict(d.get("verdicts", {})), d.get("diagnostics", []))


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


# -- measuring one cloud ------------------------------------------------------------


def measure_cloud(X, labels, measures: Sequence[str], params: EstimatorParams) -> tuple[dict, dict]:
    """Centre ``X`` once and compute the requested measures.

    Returns ``(values, errors)``: ``values[name]`` is a float (NaN on failure);
    ``errors[name]`` is ``"error: <message>"`` for a failure, or the
    estimator's degenerate status (``"fully-separable"``, ``"unstable"``).
    """
    Xc = center(np.asarray(X, dtype=np.float64))
    values: dict[str, float] = {}
    errors: dict[str, str] = {}
    if "f_mean" in measures or "f_std" in measures:
        try:
            values["f_mean"], values["f_std"] = pairwise_angle_stats(Xc)
        except ValueError as exc:
            values["f_mean"] = values["f_std"] = float("nan")
            errors["f_mean"] = errors["f_std"] = f"error: {exc}"
    if "cmean" in measures or "cstd" in measures:
        try:
            if labels is None:
                raise ValueError("no labels for class centroids")
            values["cmean"], values["cstd"] = centroid_angle_stats(Xc, labels)
        except ValueError as exc:
            values["cmean"] = values["cstd"] = float("nan")
            errors["cmean"] = errors["cstd"] = f"error: {exc}"
    wanted = [m for m in measures if m in ESTIMATORS]
    if wanted:
        for name, est in estimate_all(Xc, params, wanted).items():
            values[name] = est.value if est.status in ("ok", "unstable") else float("nan")
            if est.status == "error":
                errors[name] = f"error: {est.diagnostics['error']}"
            elif est.status != "ok":
                errors[name] = est.status
    return {m: values[m] for m in measures}, {m: errors[m] for m in measures if m in errors}


def _aggregate(name: str, per_init: list[dict], errors: list[dict], statuses: list[str]) -> MeasureStat:
    vals = [d.get(name, float("nan")) if d is not None else float("nan") for d in per_init]
    good = [v for v in vals if math.isfinite(v)]
    errs = sorted({e[name] for e in errors if e is not None and name in e})
    errs += sorted({s for s in statuses if s})
    if not good:
        return MeasureStat(None, None, [None] * len(vals), "failed", errs)
    arr = np.asarray(good)
    mean = float(math.fsum(good) / len(good))
    std = float(np.sqrt(np.mean((arr - mean) ** 2)))
    status = "ok" if len(good) == len(vals) else "partial"
    return MeasureStat(mean, std, [v if math.isfinite(v) else None for v in vals], status, errs)


def _init_features(cell: CellSpec, arch: str, r: int, batches: list[ImageBatch], cfg: ScoreConfig):
    init_seed = rng.derive_seed(cfg.seed, arch, r)
    net = kaiming_init(build_network(cell, cfg.network), InitSpec(cfg.gain, init_seed, cfg.bias))
    return init_seed, [forward_features(net, b) for b in batches]


def _concat(feats) -> tuple[np.ndarray, np.ndarray | None]:
    X = np.concatenate([f.values for f in feats])
    labels = None if feats[0].labels is None else np.concatenate([f.labels for f in feats])
    return X, labels


def _run_init(cell: CellSpec, arch: str, r: int, batches: list[ImageBatch], cfg: ScoreConfig):
    try:
        init_seed, feats = _init_features(cell, arch, r, batches, cfg)
    except FloatingPointError as exc:
        return None, None, f"error: init {r}: {exc}", rng.derive_seed(cfg.seed, arch, r)
    if cfg.mode == "concat":
        X, labels = _concat(feats)
        values, errors = measure_cloud(X, labels, cfg.measures, cfg.params)
        return values, errors, None, init_seed
    per = [measure_cloud(f.values, f.labels, cfg.measures, cfg.params) for f in feats]
    values = {}
    for m in cfg.measures:
        vs = [p[0][m] for p in per if math.isfinite(p[0][m])]
        values[m] = math.fsum(vs) / len(vs) if vs else float("nan")
    errors = {m: e[m] for _, e in per for m in e}
    return values, errors, None, init_seed


def _batches(source: DataSource | None, cfg: ScoreConfig) -> list[ImageBatch]:
    source = source or default_source(cfg)
    return [source(b, cfg.batch_size) for b in range(cfg.batches)]


def default_source(cfg: ScoreConfig) -> SyntheticImages:
    return SyntheticImages(rng.derive_seed(cfg.seed, "data"), cfg.network.input_shape)


def extract_clouds(arch: str | CellSpec, data_source: DataSource | None, cfg: ScoreConfig):
    """Yield ``(init_seed, features, labels)`` per initialisation, batches concatenated."""
    cell, arch = _cell_and_string(arch)
    batches = _batches(data_source, cfg)
    for r in range(cfg.inits):
        init_seed, feats = _init_features(cell, arch, r, batches, cfg)
        yield (init_seed, *_concat(feats))


def _cell_and_string(arch: str | CellSpec) -> tuple[CellSpec, str]:
    if isinstance(arch, CellSpec):
        return arch, format_arch_string(arch)
    cell = parse_arch_string(arch)
    return cell, format_arch_string(cell)


def score_architecture(
    arch: str | CellSpec,
    data_source: DataSource | None = None,
    cfg: ScoreConfig | None = None,
    workers: int = 1,
) -> ArchScore:
    """Score one architecture over ``cfg.inits`` initialisations.

    Initialisations may run on ``workers`` threads; every reduction happens in
    init order afterwards, so the result does not depend on ``workers``.
    """
    cfg = cfg or ScoreConfig()
    cell, arch = _cell_and_string(arch)
    source = data_source or default_source(cfg)
    batches = _batches(source, cfg)

    def job(r):
        return _run_init(cell, arch, r, batches, cfg)

    if workers > 1 and cfg.inits > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(cfg.inits)))
    else:
        results = [job(r) for r in range(cfg.inits)]

    per_init = [r[0] for r in results]
    errors = [r[1] for r in results]
    aborts = [r[2] for r in results]
    measures = {m: _aggregate(m, per_init, errors, aborts) for m in cfg.measures}
    describe = getattr(source, "describe", None)
    provenance = {
        "master_seed": cfg.seed,
        "init_seeds": [r[3] for r in results],
        "batch_ids": list(range(cfg.batches)),
        "rows_per_init": cfg.batches * cfg.batch_size,
        "data": describe() if describe else repr(source),
        "config": cfg.as_dict(),
        "config_hash": cfg.digest(),
    }
    diagnostics = [{"init": i, "abort": a} for i, a in enumerate(aborts) if a]
    return ArchScore(arch, measures, _jsonable(provenance), {}, diagnostics)


def score_many(
    archs: Iterable[str | CellSpec],
    data_source: DataSource | None = None,
    cfg: ScoreConfig | None = None,
    workers: int = 1,
) -> list[ArchScore]:
    """Score several architectures, in parallel across architectures."""
    archs = list(archs)
    if workers > 1 and len(archs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda a: score_architecture(a, data_source, cfg), archs))
    return [score_architecture(a, data_source, cfg) for a in archs]


# -- rules --------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterRule:
    """Closed intervals on a measure mean. ``keep`` passes inside, ``drop`` passes outside."""

    measure: str
    intervals: tuple[tuple[float, float], ...]
    polarity: str = "keep"

    def __post_init__(self):
        if self.polarity not in ("keep", "drop"):
            raise ValueError("polarity must be 'keep' or 'drop'")
        if not self.intervals:
            raise ValueError("a rule needs at least one interval")
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"malformed interval [{lo}, {hi}]")

    def passes(self, value: float | None) -> bool:
        if value is None or not math.isfinite(value):
            return False
        inside = any(lo <= value <= hi for lo, hi in self.intervals)
        return inside if self.polarity == "keep" else not inside

    def to_dict(self) -> dict:
        return {"measure": self.measure, "intervals": [list(i) for i in self.intervals], "polarity": self.polarity}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterRule":
        ivs = tuple((float(lo), float(hi)) for lo, hi in d["intervals"])
        return cls(d["measure"], ivs, d.get("polarity", "keep"))


def _at_most(measure: str, hi: float) -> FilterRule:
    return FilterRule(measure, ((-math.inf, hi),))


def default_rules() -> dict[str, list[FilterRule]]:
    """Bundled rule sets: ``avoid-low`` caps each ID estimate, ``top-band``
    keeps a FisherS x f_mean window, ``none`` keeps everything."""
    avoid_low = [
        _at_most("fishers", 2.5),
        _at_most("lpca", 2.5),
        _at_most("mind_mli", 8.0),
        _at_most("mind_mlk", 8.0),
        _at_most("corrint", 5.0),
        _at_most("mle", 6.0),
        _at_most("mom", 6.0),
        _at_most("mada", 6.0),
        _at_most("twonn", 8.0),
    ]
    top_band = [
        FilterRule("fishers", ((1.5, 2.5),)),
        FilterRule("f_mean", ((85.0, 88.0), (90.0, 92.5))),
    ]
    return {"avoid-low": avoid_low, "top-band": top_band, "none": []}


@dataclass(frozen=True)
class Verdict:
    keep: bool
    failed: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.keep


def apply_rules(score: ArchScore | dict, rules: Sequence[FilterRule]) -> Verdict:
    """Conjunction of the rules on measure means; an empty rule list keeps."""
    means = _means(score)
    failed = []
    for rule in rules:
        if rule.measure not in means:
            raise RuleError(f"rule needs measure {rule.measure!r}, absent from score")
        if not rule.passes(means[rule.measure]):
            failed.append(rule.measure)
    return Verdict(not failed, tuple(failed))


def _means(score) -> dict[str, float | None]:
    if isinstance(score, ArchScore):
        return {k: v.mean for k, v in score.measures.items()}
    return dict(score)


def rank(scores: Sequence[ArchScore], key: str, descending: bool = False) -> list[ArchScore]:
    """Order by a measure mean; failed measures go last, ties break on arch string."""

    def sort_key(s: ArchScore):
        m = s.measures.get(key)
        v = None if m is None else m.mean
        missing = v is None or not math.isfinite(v)
        return (missing, 0.0 if missing else (-v if descending else v), s.arch)

    return sorted(scores, key=sort_key)
