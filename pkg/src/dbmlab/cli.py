"""Command-line runner: grow, verify, oracle, export, lemma-sweep.

Exit codes: 0 ok, 1 a calibrated verification threshold failed, 2 usage or
config error, 3 runtime abort (a partial trace is still written).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from datetime import datetime, timezone

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


# --------------------------------------------------------------------------
# threads: must be settled before numba spins up its pool
# --------------------------------------------------------------------------


def set_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


def _check_type(name, value, kind):
    ok = {
        int: isinstance(value, int) and not isinstance(value, bool),
        float: isinstance(value, (int, float)) and not isinstance(value, bool),
        bool: isinstance(value, bool),
        str: isinstance(value, str),
    }[kind]
    if not ok:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}")


_GROWTH_TYPES = {
    "dimension": int, "eta": float, "n_particles": int, "measure_mode": str,
    "samples_per_step": int, "capacity_checkpoint_every": int, "checkpoint_samples": int,
    "omega_every": int, "omega_samples": int, "seed": int, "strict_eden": bool, "site_cap": int,
}
_WALKER_TYPES = {
    "launch_factor": float, "kill_factor": float, "max_steps": int, "rng_seed": int,
    "min_launch_radius": float,
}


def config_from_dict(data: dict, seed: int | None = None):
    """GrowthConfig from a JSON object; unknown keys and bad values raise ConfigError."""
    from .growth import GrowthConfig
    from .lattice import ContractViolation, DimensionError
    from .walkers import WalkerConfig

    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    kw, wkw = {}, {}
    for k, v in data.items():
        if k == "walker":
            if not isinstance(v, dict):
                raise ConfigError("walker: expected an object")
            for wk, wv in v.items():
                if wk not in _WALKER_TYPES:
                    raise ConfigError(f"walker.{wk}: unknown key")
                if wv is not None:
                    _check_type(f"walker.{wk}", wv, _WALKER_TYPES[wk])
                wkw[wk] = wv
        elif k in _GROWTH_TYPES:
            if v is not None:
                _check_type(k, v, _GROWTH_TYPES[k])
            kw[k] = v
        else:
            raise ConfigError(f"{k}: unknown key")
    if seed is not None:
        kw["seed"] = seed
    try:
        walker = WalkerConfig(**wkw)
        return GrowthConfig(walker=walker, **kw)
    except (ContractViolation, DimensionError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    return d


# --------------------------------------------------------------------------
# trace files
# --------------------------------------------------------------------------


def manifest(cfg, stamp: bool = False, complete: bool = True, extra=None) -> dict:
    from . import __version__

    now = datetime.now(timezone.utc).isoformat() if stamp else None
    m = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trace",
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "code_version": __version__,
        "timestamps": {"written": now},
        "complete": complete,
    }
    if extra:
        m.update(extra)
    return m


def _step_json(rec) -> dict:
    out = {"n": rec.n, "site": list(rec.site), "omega": rec.omega, "r": rec.radius, "cap": rec.capacity}
    if rec.stats is not None:
        out["stats"] = rec.stats
    return out


def write_trace(trace, path, stamp: bool = False):
    m = manifest(trace.config, stamp, trace.complete, {"diagnostics": trace.diagnostics})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(m, sort_keys=True) + "\n")
        for rec in trace.steps:
            fh.write(json.dumps(_step_json(rec), sort_keys=True) + "\n")


def read_trace(path):
    """Parse a JSONL trace; the final cluster is rebuilt by replaying the attachments."""
    from .growth import GrowthTrace, StepRecord
    from .lattice import Cluster

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError("empty trace file")
    head = json.loads(lines[0])
    version = head.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r} (this build reads {SCHEMA_VERSION})")
    if head.get("kind") != "trace":
        raise SchemaError("not a trace file")
    cfg = config_from_dict({k: v for k, v in head["config"].items()})
    steps = []
    for line in lines[1:]:
        o = json.loads(line)
        steps.append(StepRecord(o["n"], tuple(o["site"]), o["omega"], o["r"], o["cap"], o.get("stats")))
    cluster = Cluster.replay(cfg.dimension, [s.site for s in steps])
    return GrowthTrace(cfg, steps, cluster, head.get("diagnostics", {}), head.get("complete", True))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required")
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data, args.seed)


def cmd_grow(args) -> int:
    from .growth import GrowthAborted, grow

    cfg = _load_config(args)
    out = args.out or "trace.jsonl"
    try:
        trace = grow(cfg)
    except GrowthAborted as exc:
        write_trace(exc.trace, out, args.stamp)
        print(f"aborted: {exc}; partial trace written to {out}", file=sys.stderr)
        return EXIT_ABORT
    write_trace(trace, out, args.stamp)
    print(f"wrote {len(trace.steps)} steps to {out}")
    return EXIT_OK


def _json_safe(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {str(k): _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    if hasattr(o, "item"):
        return _json_safe(o.item())
    return o


def cmd_verify(args) -> int:
    from .analysis import verify

    trace = read_trace(args.trace)
    rep = verify(trace)
    print(rep.table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(_json_safe(rep.to_dict()), fh, indent=1, sort_keys=True)
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_oracle(args) -> int:
    from .oracle import enumerate_dbm

    sd = enumerate_dbm(args.dimension, args.eta, args.depth, strict_eden=args.strict_eden)
    class_ids = {k: i for i, k in enumerate(sorted(sd.classes))}
    of_shape = {s: class_ids[k] for k, members in sd.classes.items() for s in members}
    cp = sd.class_probabilities()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "shape_distribution",
        "dimension": sd.dimension,
        "eta": sd.eta,
        "depth": sd.depth,
        "shapes": [{"sites": [list(s) for s in sorted(shape)], "probability": p, "class": of_shape[shape]}
                   for shape, p in sorted(sd.entries.items(), key=lambda kv: sorted(kv[0]))],
        "classes": [{"id": class_ids[k], "representative": [list(s) for s in k],
                     "members": len(sd.classes[k]), "probability": cp[k]} for k in sorted(sd.classes)],
    }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_lemma_sweep(args) -> int:
    from .oracle import lemma_sweep

    t = lemma_sweep(args.dimension, args.max_sites)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "lemma_sweep",
        "dimension": t.dimension,
        "max_sites": t.max_sites,
        "c": t.c,
        "C": t.C,
        "instances": t.instances,
        "zero_measure_sites": t.zero_measure_sites,
        "by_size": {str(k): list(v) for k, v in sorted(t.by_size.items())},
    }
    _emit_json(_json_safe(doc), args.out)
    return EXIT_OK


def _emit_json(doc, out):
    text = json.dumps(doc, indent=1, sort_keys=True)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


EXPORTS = {
    "radius_series": ["n", "radius"],
    "spectra": ["checkpoint_n", "R", "alpha", "sum", "tau_hat"],
    "increments": ["n", "omega_hat", "delta_cap"],
}


def export_rows(trace, what: str):
    from .analysis import SpectrumReport

    if what == "radius_series":
        for s in trace.steps:
            yield [s.n, s.radius]
    elif what == "spectra":
        for c in trace.checkpoints():
            sp = SpectrumReport.from_stats(c.stats, c.n)
            for a, v, t in zip(sp.alphas, sp.sums, sp.tau_hat):
                yield [c.n, sp.radius, a, v, t]
    else:
        # delta_cap at step n: Cap(cl A_n) - Cap(cl A_{n-1}); caps are stored pre-attachment
        steps = trace.steps
        for i, s in enumerate(steps):
            nxt = steps[i + 1] if i + 1 < len(steps) else None
            dc = None
            if s.capacity is not None and nxt is not None and nxt.capacity is not None:
                dc = nxt.capacity - s.capacity
            yield [s.n, s.omega, dc]


def cmd_export(args) -> int:
    if args.what not in EXPORTS:
        raise ConfigError(f"unknown series {args.what!r}; choose from {', '.join(EXPORTS)}")
    trace = read_trace(args.trace)
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(EXPORTS[args.what])
        for row in export_rows(trace, args.what):
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbmlab", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker threads (speed only)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", help="run the growth chain and write a JSONL trace")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=None, help="override the config seed")
    g.add_argument("--stamp", action="store_true", help="record a wall-clock timestamp in the manifest")
    g.set_defaults(func=cmd_grow)

    v = sub.add_parser("verify", help="check a trace against the growth and measure bounds")
    v.add_argument("trace")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="exact law of A_depth by enumeration")
    o.add_argument("--dimension", type=int, default=2)
    o.add_argument("--eta", type=float, default=1.0)
    o.add_argument("--depth", type=int, default=1)
    o.add_argument("--strict-eden", action="store_true")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("export", help="flat CSV series from a trace")
    e.add_argument("trace")
    e.add_argument("what", help="radius_series | spectra | increments")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("lemma-sweep", help="capacity-increment ratios over all small shapes")
    s.add_argument("--dimension", type=int, default=2)
    s.add_argument("--max-sites", type=int, default=6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lemma_sweep)

    for sp in (g, v, o, e, s):
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (speed only)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        set_threads(args.threads)
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        from .lattice import ContractViolation, DimensionError

        if isinstance(exc, (ContractViolation, DimensionError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
