"""Command-line entry point: ``nasgeom <command> ...``.

Exit codes: 0 ok, 1 a check or every measure failed, 2 usage or I/O error.
``NASGEOM_WORKERS`` sets the default worker count. ``--config FILE`` reads
flat ``key=value`` defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from nasgeom import __version__, rng
from nasgeom.idest import EstimatorParams
from nasgeom.io import (
    CifarBatches,
    FormatError,
    atomic_write,
    file_digest,
    read_config,
    read_features,
    write_csv_features,
    write_fmat,
)
from nasgeom.netlab import ArchParseError, NetworkConfig, format_arch_string, parse_arch_string, random_arch
from nasgeom.pipeline import (
    ALL_MEASURES,
    ArchScore,
    FilterRule,
    RuleError,
    ScoreConfig,
    SyntheticImages,
    _aggregate,
    _jsonable,
    apply_rules,
    default_rules,
    extract_clouds,
    measure_cloud,
    rank,
    score_many,
)
from nasgeom import synth

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

PROFILES = {
    "desk": {"inits": 3, "batches": 1, "batch_size": 128, "cells": 1},
    "full": {"inits": 50, "batches": 10, "batch_size": 128, "cells": 5},
}


class UsageError(Exception):
    pass


def _workers_default() -> int:
    try:
        return max(1, int(os.environ.get("NASGEOM_WORKERS", "1")))
    except ValueError:
        return 1


def _manifest(args, cfg: ScoreConfig | None = None, inputs=()) -> dict:
    return {
        "schema": 1,
        "toolkit_version": __version__,
        "command": getattr(args, "argv", []),
        "master_seed": getattr(args, "seed", None),
        "config_hash": cfg.digest() if cfg else None,
        "config": cfg.as_dict() if cfg else None,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def _dump_json(obj, path=None) -> None:
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"
    if path:
        atomic_write(path, text.encode())
    else:
        sys.stdout.write(text)


def _params(pairs) -> EstimatorParams:
    known = {f.name: f for f in fields(EstimatorParams)}
    kwargs = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise UsageError(f"unknown estimator parameter {item!r}")
        kwargs[key] = json.loads(value) if value.strip()[:1] in "[(0123456789.-tfn" else value
        if isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return EstimatorParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _score_config(args) -> ScoreConfig:
    prof = PROFILES[args.profile]
    pick = lambda name: prof[name] if getattr(args, name) is None else getattr(args, name)
    measures = tuple(args.only.split(",")) if getattr(args, "only", None) else ALL_MEASURES
    try:
        net = NetworkConfig(
            cells_per_stage=pick("cells"),
            initial_channels=args.channels,
            input_shape=(3, 32, 32),
        )
        return ScoreConfig(
            inits=pick("inits"),
            batches=pick("batches"),
            batch_size=pick("batch_size"),
            seed=args.seed,
            network=net,
            gain=args.gain,
            bias=not args.no_bias,
            measures=measures,
            params=_params(getattr(args, "param", None)),
            mode=args.mode,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _data_source(args):
    if getattr(args, "cifar", None):
        return CifarBatches(args.cifar, seed=rng.derive_seed(args.seed, "data"))
    return None


def _archs(args) -> list[str]:
    archs = list(getattr(args, "arch", None) or [])
    if getattr(args, "arch_file", None):
        archs += [ln.strip() for ln in Path(args.arch_file).read_text().splitlines() if ln.strip()]
    if getattr(args, "random", None):
        archs += [format_arch_string(random_arch(rng.derive_seed(args.seed, "arch", i))) for i in range(args.random)]
    if not archs:
        raise UsageError("no architecture given (use --arch, --arch-file or --random)")
    return [format_arch_string(parse_arch_string(a)) for a in archs]


# -- commands ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.d < 1 or args.n < 2:
        raise UsageError("--d must be >= 1 and --n >= 2")
    if args.kind == "images":
        batch = synth.synth_images(args.n, (3, 32, 32), args.seed)
        values, labels, true_dim = batch.data.reshape(args.n, -1), batch.labels, None
    else:
        sampler = {"cube": synth.sample_cube, "sphere": synth.sample_sphere, "gaussian": synth.sample_gaussian}
        m = sampler[args.kind](args.d, args.n, args.seed)
        if args.embed:
            if args.embed < args.d:
                raise UsageError("--embed must be >= --d")
            m = synth.embed(m, args.embed, args.seed, args.noise)
        values, labels, true_dim = m.data, None, m.true_dim
    if str(args.out).endswith(".csv"):
        write_csv_features(args.out, values, labels)
    else:
        write_fmat(args.out, values, labels)
    print(f"wrote {values.shape[0]}x{values.shape[1]} to {args.out}; true_dim={true_dim}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _score_config(args)
    source = _data_source(args)
    archs = _archs(args)
    out = Path(args.out)
    for i, arch in enumerate(archs):
        target = out if len(archs) == 1 else out / f"arch_{i:04d}"
        seeds = []
        for r, (seed, X, labels) in enumerate(extract_clouds(arch, source, cfg)):
            write_fmat(target / f"init_{r:03d}.fmat", X, labels)
            seeds.append(seed)
        man = _manifest(args, cfg, args.cifar or ())
        man.update(arch=arch, init_seeds=seeds, rows_per_init=cfg.batches * cfg.batch_size)
        _dump_json(man, target / "manifest.json")
        print(f"{arch}: {cfg.inits} feature files ({cfg.batches * cfg.batch_size} rows each) in {target}")
    return EXIT_OK


def cmd_measure(args) -> int:
    cfg = _score_config(args)
    feats = [read_features(p) for p in args.files]
    arch = args.arch
    man_path = Path(args.files[0]).parent / "manifest.json"
    if arch is None and man_path.exists():
        arch = json.loads(man_path.read_text()).get("arch")
    per_init, errors = [], []
    for f in feats:
        v, e = measure_cloud(f.values, f.labels, cfg.measures, cfg.params)
        per_init.append(v)
        errors.append(e)
    measures = {m: _aggregate(m, per_init, errors, []) for m in cfg.measures}
    score = ArchScore(arch or "", measures, {"files": [str(p) for p in args.files], "config_hash": cfg.digest()})
    record = score.to_dict()
    record["manifest"] = _manifest(args, cfg, args.files)
    _dump_json(record, args.out)
    ok = any(m.status != "failed" for m in measures.values())
    return EXIT_OK if ok else EXIT_CHECK


def cmd_score(args) -> int:
    cfg = _score_config(args)
    archs = _archs(args)
    scores = score_many(archs, _data_source(args), cfg, workers=args.workers)
    out = Path(args.out)
    for i, s in enumerate(scores):
        record = s.to_dict()
        record["manifest"] = _manifest(args, cfg, args.cifar or ())
        _dump_json(record, out / f"score_{i:04d}.json")
    print(f"scored {len(scores)} architectures into {out}")
    return EXIT_OK


def _load_scores(paths) -> list[ArchScore]:
    scores = []
    for p in paths:
        try:
            scores.append(ArchScore.from_dict(json.loads(Path(p).read_text())))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{p}: not a score record ({exc})") from exc
    return scores


def _rule_sets(name: str | None) -> dict[str, list[FilterRule]]:
    bundled = default_rules()
    sets = {k: v for k, v in bundled.items() if k != "none"}
    if name is None:
        return sets
    if name in bundled:
        sets[name] = bundled[name]
        return sets
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown rule set {name!r} (choose {sorted(bundled)} or a JSON file)")
    sets[path.stem] = [FilterRule.from_dict(d) for d in json.loads(path.read_text())]
    return sets


def _verdict_text(score, rules) -> str:
    try:
        return "keep" if apply_rules(score, rules).keep else "drop"
    except RuleError:
        return "n/a"


def _table(scores, rule_sets) -> tuple[str, list[dict]]:
    names = [m for m in ALL_MEASURES if any(m in s.measures for s in scores)]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["arch"] + [f"{m}_mean" for m in names] + [f"{m}_std" for m in names]
    header += [f"verdict_{k}" for k in rule_sets]
    w.writerow(header)
    records = []
    for s in scores:
        def cell(m, attr):
            st = s.measures.get(m)
            v = None if st is None else getattr(st, attr)
            return "" if v is None else repr(float(v))

        verdicts = {k: _verdict_text(s, r) for k, r in rule_sets.items()}
        w.writerow([s.arch] + [cell(m, "mean") for m in names] + [cell(m, "std") for m in names] + list(verdicts.values()))
        records.append({"arch": s.arch, "verdicts": verdicts})
    return buf.getvalue(), records


def _emit_table(args, scores, rule_sets, chosen: str) -> int:
    text, records = _table(scores, rule_sets)
    if args.csv:
        atomic_write(args.csv, text.encode())
    else:
        sys.stdout.write(text)
    if args.json:
        _dump_json({"schema": 1, "rules": chosen, "records": records}, args.json)
    return EXIT_OK


def cmd_filter(args) -> int:
    rule_sets = _rule_sets(args.rules)
    chosen = args.rules if args.rules in rule_sets else Path(args.rules).stem
    scores = sorted(_load_scores(args.scores), key=lambda s: s.arch)
    if args.keep_only:
        scores = [s for s in scores if _verdict_text(s, rule_sets[chosen]) == "keep"]
    return _emit_table(args, scores, rule_sets, chosen)


def cmd_rank(args) -> int:
    rule_sets = _rule_sets(args.rules)
    scores = rank(_load_scores(args.scores), args.key, descending=args.descending)
    return _emit_table(args, scores, rule_sets, args.rules or "")


def cmd_selfcheck(args) -> int:
    from nasgeom.selfcheck import run_all

    checks = run_all()
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.seconds:6.2f}s  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


# -- parser -----------------------------------------------------------------------------


def _protocol_options(p: argparse.ArgumentParser, with_measures: bool = True) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="desk: R=3, B=1, N=1; full: R=50, B=10, N=5 (explicit flags override)")
    p.add_argument("--inits", type=int, help="R, number of weight initialisations")
    p.add_argument("--batches", type=int, help="B, batches per initialisation")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--cells", type=int, help="N, cells per stage")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--gain", type=float, default=math.sqrt(2.0))
    p.add_argument("--no-bias", action="store_true", help="zero conv biases instead of sampling them")
    p.add_argument("--mode", choices=("concat", "per_batch"), default="concat")
    p.add_argument("--seed", type=int, default=0)
    if with_measures:
        p.add_argument("--only", help="comma-separated subset of measures")
        p.add_argument("--param", action="append", metavar="KEY=VALUE", help="estimator parameter override")


def _arch_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", action="append", help="architecture string (repeatable)")
    p.add_argument("--arch-file", help="file with one architecture string per line")
    p.add_argument("--random", type=int, help="add this many seeded random architectures")
    p.add_argument("--cifar", nargs="+", help="CIFAR-10 binary batch files (default: synthetic images)")
    p.add_argument("--synthetic", action="store_true", help="use seeded noise images (the default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nasgeom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="flat key=value defaults file")
    parser.add_argument("--workers", type=int, default=_workers_default())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a manifold sample or noise images")
    p.add_argument("kind", choices=("cube", "sphere", "gaussian", "images"))
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--embed", type=int)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write one feature file per initialisation")
    _arch_options(p)
    _protocol_options(p, with_measures=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("measure", help="measure feature files")
    p.add_argument("files", nargs="+")
    p.add_argument("--arch")
    _protocol_options(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("score", help="extract and measure architectures in one go")
    _arch_options(p)
    _protocol_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    for name, func in (("filter", cmd_filter), ("rank", cmd_rank)):
        p = sub.add_parser(name, help=f"{name} score records")
        p.add_argument("scores", nargs="+")
        p.add_argument("--rules", default="top-band" if name == "filter" else None,
                       help="avoid-low, top-band, none, or a JSON rules file")
        p.add_argument("--csv")
        p.add_argument("--json")
        if name == "filter":
            p.add_argument("--keep-only", action="store_true")
        else:
            p.add_argument("--key", default="fishers")
            p.add_argument("--descending", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("selfcheck", help="run the bundled oracle checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def _config_value(action, text: str):
    # argparse converts string defaults through ``type`` but not for flags
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {action.dest!r} expects a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(action, argparse._AppendAction):
        return [text]
    return text


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            conf = read_config(args.config)
            sub = parser._subparsers._group_actions[0].choices[args.command]
            dests = {a.dest for a in sub._actions} | {a.dest for a in parser._actions}
            unknown = sorted(set(conf) - dests)
            if unknown:
                raise UsageError(f"unknown config keys: {unknown}")
            for target in (sub, parser):
                actions = {a.dest: a for a in target._actions}
                target.set_defaults(**{k: _config_value(actions[k], v) for k, v in conf.items() if k in actions})
            args = parser.parse_args(argv)
        args.argv = argv
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"nasgeom: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ArchParseError, OSError, ValueError) as exc:
        print(f"nasgeom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
