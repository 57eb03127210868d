"""Command-line entry point: ``eppsim <command> [--config F] [--seed N] [--out P] [--format csv|json]``.

Each command reads an optional JSON config (unknown keys are errors), fills
defaults, and writes one table.  CSV output starts with a ``#`` comment
block holding the resolved config and metadata; JSON output nests the same
under ``"metadata"``.  Outputs are byte-identical for a fixed seed.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .decoherence import MEMORY_PRESETS, IntegratorConfig, MemoryParams, convergence_report, fidelity_decay_curve
from .experiments import (
    DQC_THRESHOLD,
    QKD_THRESHOLD,
    distillable_rate_sweep,
    epc_from_batch,
    fidelity_vs_budget_grid,
    iso_contour,
    simulate_batch,
)
from .network import LinkConfig, load_latency_csv, pair_rate, sample_latency, synthetic_latencies, write_latency_csv
from .purification import DejmpsVariant, Protocol, TwirlMode
from .quantum import random_states_with_fidelity, werner_state

COMMANDS = ("decay-curve", "trajectory", "epc-heatmap", "rate-sweep", "convergence", "gen-latency")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

_FID = {"type": "number", "minimum": 0, "maximum": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}

_MEMORY = {
    "oneOf": [
        {"type": "string", "enum": sorted(MEMORY_PRESETS)},
        {
            "type": "object",
            "properties": {
                "preset": {"type": "string", "enum": sorted(MEMORY_PRESETS)},
                "T1": _POS,
                "T2": _POS,
                "label": {"type": "string"},
                "scale": _POS,
            },
            "additionalProperties": False,
        },
    ]
}

_GRID = {
    "type": "object",
    "properties": {"start": _NONNEG, "stop": _NONNEG, "num": _POS_INT},
    "required": ["start", "stop", "num"],
    "additionalProperties": False,
}

_COMMON = {
    "seed": _NONNEG_INT,
    "format": {"enum": ["csv", "json"]},
    "out": {"type": "string"},
    "workers": _POS_INT,
}

_LATENCY = {
    "latencies_ms": {"type": "array", "items": _NONNEG, "minItems": 1},
    "latency_grid": _GRID,
    "latency_csv": {"type": "string"},
    "latency_samples": _POS_INT,
    "latency_multiplier": _POS,
}

_PROTOCOLS = {"type": "array", "items": {"enum": [p.value for p in Protocol]}, "minItems": 1}

_PROTOCOL_OPTS = {
    "twirl": {"enum": [t.value for t in TwirlMode]},
    "dejmps_variant": {"enum": [v.value for v in DejmpsVariant]},
    "substeps": _POS_INT,
    "max_rounds": _POS_INT,
}


def _schema(props):
    return {"type": "object", "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "decay-curve": _schema({
        **_LATENCY,
        "memories": {"type": "array", "items": _MEMORY, "minItems": 1},
        "F0": _FID,
        "substeps": _POS_INT,
    }),
    "trajectory": _schema({
        **_LATENCY, **_PROTOCOL_OPTS,
        "protocols": _PROTOCOLS,
        "memory": _MEMORY,
        "F0": _FID,
        "n_states": _NONNEG_INT,
    }),
    "epc-heatmap": _schema({
        **_LATENCY, **_PROTOCOL_OPTS,
        "protocols": _PROTOCOLS,
        "memory": _MEMORY,
        "F0": _FID,
        "n_states": _NONNEG_INT,
        "budgets": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
        "budget_grid": {
            "type": "object",
            "properties": {"start": {"type": "number", "minimum": 1}, "stop": {"type": "number", "minimum": 1},
                           "num": _POS_INT, "log": {"type": "boolean"}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
        "contour_levels": {"type": "array", "items": _FID},
    }),
    "rate-sweep": _schema({
        **_LATENCY, **_PROTOCOL_OPTS,
        "protocols": _PROTOCOLS,
        "memories": {"type": "array", "items": _MEMORY, "minItems": 1},
        "thresholds": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                       "minItems": 1},
        "F0": _FID,
        "n_states": _NONNEG_INT,
        "link": {
            "type": "object",
            "properties": {
                "source_rate": _POS,
                "fiber_length_a": _NONNEG, "fiber_length_b": _NONNEG,
                "intermediate_nodes_a": _NONNEG_INT, "intermediate_nodes_b": _NONNEG_INT,
                "loss_intermediate_db": _NONNEG, "loss_endpoint_db": _NONNEG,
                "fiber_atten_db_per_km": _NONNEG,
            },
            "additionalProperties": False,
        },
    }),
    "convergence": _schema({
        "memory": _MEMORY,
        "protocol": {"enum": [p.value for p in Protocol]},
        "F0": _FID,
        "dts_ms": {"type": "array", "items": _POS, "minItems": 1},
        "nus": {"type": "array", "items": _POS_INT, "minItems": 1},
        "rounds": _POS_INT,
    }),
    "gen-latency": _schema({
        "family": {"enum": ["lognormal"]},
        "count": {"type": "integer"},
        "median_ms": _POS,
        "sigma": _POS,
    }),
}

DEFAULTS = {
    "decay-curve": {"memories": ["ca40", "er167", "nv"], "F0": 1.0, "substeps": 1,
                    "latency_grid": {"start": 0, "stop": 50, "num": 51}},
    "trajectory": {"protocols": ["bbpssw", "dejmps"], "memory": "ca40", "F0": 0.75, "n_states": 0,
                   "latency_grid": {"start": 0, "stop": 50, "num": 11}},
    "epc-heatmap": {"protocols": ["bbpssw", "dejmps"], "memory": "ca40", "F0": 0.75, "n_states": 1024,
                    "latency_grid": {"start": 0, "stop": 50, "num": 11},
                    "budget_grid": {"start": 1, "stop": 1e6, "num": 25, "log": True}},
    "rate-sweep": {"protocols": ["bbpssw", "dejmps"], "memories": ["ca40"], "thresholds": [0.81, 0.98],
                   "F0": 0.75, "n_states": 1024, "link": {},
                   "latency_grid": {"start": 0, "stop": 50, "num": 51}},
    "convergence": {"memory": "ca40", "protocol": "dejmps", "F0": 0.75, "dts_ms": [5, 15],
                    "nus": [1, 2, 10], "rounds": 30},
    "gen-latency": {"family": "lognormal", "count": 1000, "median_ms": 12.0, "sigma": 0.5},
}
_COMMON_DEFAULTS = {"seed": 0, "format": "csv", "workers": 1}
_PROTOCOL_DEFAULTS = {"twirl": "deterministic", "dejmps_variant": "conjugate_b", "substeps": 1,
                      "max_rounds": 30, "latency_multiplier": 1.0}


def resolve_config(command, raw=None, **overrides):
    """Validate ``raw`` against the command schema and fill defaults."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    raw = dict(raw or {})
    raw.update({k: v for k, v in overrides.items() if v is not None})
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError(f"invalid {command} config:\n  " + "\n  ".join(msgs))
    props = SCHEMAS[command]["properties"]
    cfg = {**_COMMON_DEFAULTS, **{k: v for k, v in _PROTOCOL_DEFAULTS.items() if k in props}}
    lat_keys = {"latencies_ms", "latency_grid", "latency_csv"}
    given_lat = lat_keys & raw.keys()
    if len(given_lat) > 1:
        raise ConfigError(f"give only one of {sorted(lat_keys)}, got {sorted(given_lat)}")
    for k, v in DEFAULTS[command].items():
        if k == "latency_grid" and given_lat:
            continue
        if k == "budget_grid" and "budgets" in raw:
            continue
        cfg[k] = v
    cfg.update(raw)
    if "latency_csv" in cfg:
        cfg.setdefault("latency_samples", 16)
    if "budgets" in cfg and "budget_grid" in cfg:
        raise ConfigError("give only one of budgets, budget_grid")
    if command == "gen-latency" and cfg["count"] < 0:
        raise ConfigError(f"count must be non-negative, got {cfg['count']}")
    for key in ("memory",):
        if key in cfg:
            memory_from_spec(cfg[key])
    for spec in cfg.get("memories", []):
        memory_from_spec(spec)
    return cfg


def memory_from_spec(spec):
    """Preset name or ``{"preset", "T1", "T2", "label", "scale"}``; explicit times win."""
    if isinstance(spec, str):
        return MemoryParams.preset(spec)
    preset = spec.get("preset")
    T1, T2 = MEMORY_PRESETS[preset] if preset else (None, None)
    T1 = spec.get("T1", T1)
    T2 = spec.get("T2", T2)
    if T1 is None or T2 is None:
        raise ConfigError("memory needs a preset or both T1 and T2")
    scale = spec.get("scale", 1.0)
    label = spec.get("label") or preset or f"T1={T1:g},T2={T2:g}"
    if scale != 1.0:
        label = spec.get("label") or f"{label}*{scale:g}"
    return MemoryParams(T1 * scale, T2 * scale, label=label)


def latencies_from_config(cfg, rng):
    if "latencies_ms" in cfg:
        return np.asarray(cfg["latencies_ms"], dtype=float)
    if "latency_csv" in cfg:
        try:
            dist = load_latency_csv(cfg["latency_csv"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"latency_csv: {exc}") from exc
        return np.sort(sample_latency(dist, rng, size=cfg["latency_samples"]))
    g = cfg["latency_grid"]
    if g["stop"] < g["start"]:
        raise ConfigError("latency_grid stop must be >= start")
    return np.linspace(g["start"], g["stop"], g["num"])


def budgets_from_config(cfg):
    if "budgets" in cfg:
        return np.asarray(cfg["budgets"], dtype=float)
    g = cfg["budget_grid"]
    if g.get("log", False):
        return np.geomspace(g["start"], g["stop"], g["num"])
    return np.linspace(g["start"], g["stop"], g["num"])


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return str(v)


def _recorded(cfg):
    # the destination path is not a run parameter; leaving it out keeps reruns byte-identical
    return {k: v for k, v in cfg.items() if k != "out"}


def render(command, cfg, columns, rows, metadata, fmt):
    meta = _plain({"command": command, "version": __version__, "config": _recorded(cfg), **metadata})
    if fmt == "json":
        doc = {"metadata": meta, "columns": list(columns),
               "rows": [[_plain(v) for v in r] for r in rows]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# eppsim {command}\n")
    buf.write("# metadata: " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_cell(v) for v in r) + "\n")
    return buf.getvalue()


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _rng(cfg):
    return np.random.default_rng(np.random.SeedSequence(cfg["seed"]))


def cmd_decay_curve(cfg):
    rng = _rng(cfg)
    lat = latencies_from_config(cfg, rng)
    icfg = IntegratorConfig(substeps=cfg["substeps"])
    rows = []
    series = []
    for spec in cfg["memories"]:
        mem = memory_from_spec(spec)
        series.append(mem.label)
        for t, f in fidelity_decay_curve(mem, lat * 1e-3, cfg["F0"], cfg=icfg):
            rows.append((mem.label, t * 1e3, f))
    meta = {"series": series, "thresholds": {"qkd": QKD_THRESHOLD, "dqc": DQC_THRESHOLD}}
    return ("memory", "latency_ms", "fidelity"), rows, meta


def cmd_trajectory(cfg):
    rng = _rng(cfg)
    lat = latencies_from_config(cfg, rng)
    mem = memory_from_spec(cfg["memory"])
    icfg = IntegratorConfig(substeps=cfg["substeps"])
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(len(cfg["protocols"]) * len(lat) + 1)
    if cfg["n_states"] > 0:
        states = random_states_with_fidelity(cfg["F0"], cfg["n_states"], np.random.default_rng(seeds[0]))
    else:
        states = werner_state(cfg["F0"])[None]
    rows = []
    k = 1
    for proto in cfg["protocols"]:
        for t in lat:
            b = simulate_batch(proto, states, t, mem, cfg["max_rounds"], icfg, np.random.default_rng(seeds[k]),
                               twirl=cfg["twirl"], variant=cfg["dejmps_variant"],
                               latency_multiplier=cfg["latency_multiplier"])
            k += 1
            pre = np.vstack([b.initial_fidelity, b.fidelities[:-1]]).mean(axis=1)
            for i in range(cfg["max_rounds"]):
                rows.append((proto, float(t), i + 1, float(pre[i]), float(b.success_probs[i].mean()),
                             float(b.fidelities[i].mean())))
    meta = {"memory": {"label": mem.label, "T1": mem.T1, "T2": mem.T2},
            "thresholds": {"qkd": QKD_THRESHOLD, "dqc": DQC_THRESHOLD},
            "latencies_ms": lat}
    return ("protocol", "latency_ms", "round", "pre_fidelity", "success_prob", "post_fidelity"), rows, meta


def cmd_epc_heatmap(cfg):
    rng = _rng(cfg)
    lat = latencies_from_config(cfg, rng)
    budgets = budgets_from_config(cfg)
    mem = memory_from_spec(cfg["memory"])
    icfg = IntegratorConfig(substeps=cfg["substeps"])
    levels = cfg.get("contour_levels", [cfg["F0"], QKD_THRESHOLD, DQC_THRESHOLD])
    rows = []
    contours = {}
    for j, proto in enumerate(cfg["protocols"]):
        grid = fidelity_vs_budget_grid(proto, cfg["F0"], mem, lat, budgets, max_rounds=cfg["max_rounds"],
                                       n_states=cfg["n_states"], seed=[cfg["seed"], j], cfg=icfg,
                                       twirl=cfg["twirl"], variant=cfg["dejmps_variant"],
                                       latency_multiplier=cfg["latency_multiplier"], workers=cfg["workers"])
        for a, t in enumerate(lat):
            for c, e in enumerate(budgets):
                rows.append((proto, float(t), float(e), float(grid.fidelity[a, c])))
        contours[proto] = {repr(float(lv)): [line.tolist() for line in iso_contour(grid, lv)] for lv in levels}
    meta = {"memory": {"label": mem.label, "T1": mem.T1, "T2": mem.T2},
            "contour_levels": levels, "contours": contours,
            "contour_columns": ["budget", "latency_ms"], "n_states": cfg["n_states"]}
    return ("protocol", "latency_ms", "budget", "fidelity"), rows, meta


def cmd_rate_sweep(cfg):
    rng = _rng(cfg)
    lat = latencies_from_config(cfg, rng)
    link = LinkConfig(**cfg["link"])
    icfg = IntegratorConfig(substeps=cfg["substeps"])
    rows = []
    j = 0
    for spec in cfg["memories"]:
        mem = memory_from_spec(spec)
        for proto in cfg["protocols"]:
            for th in cfg["thresholds"]:
                curve = distillable_rate_sweep(proto, th, mem, lat, link, F0=cfg["F0"], n_states=cfg["n_states"],
                                               seed=[cfg["seed"], j], max_rounds=cfg["max_rounds"], cfg=icfg,
                                               twirl=cfg["twirl"], variant=cfg["dejmps_variant"],
                                               latency_multiplier=cfg["latency_multiplier"],
                                               workers=cfg["workers"])
                j += 1
                for t, r, e, fr in zip(lat, curve.rates, curve.expected_pairs, curve.attainable_fraction):
                    rows.append((mem.label, proto, float(th), float(t), float(r), float(e), float(fr)))
    link_meta = {k: getattr(link, k) for k in LinkConfig.__dataclass_fields__}
    meta = {"link": link_meta, "pair_rate": pair_rate(link)}
    return ("memory", "protocol", "threshold", "latency_ms", "rate", "expected_pairs", "attainable_fraction"), rows, meta


def cmd_convergence(cfg):
    mem = memory_from_spec(cfg["memory"])
    rows = []
    summary = {}
    for dt in cfg["dts_ms"]:
        rep = convergence_report(mem, dt * 1e-3, cfg["nus"], rounds=cfg["rounds"],
                                 protocol=cfg["protocol"], F0=cfg["F0"])
        summary[repr(float(dt))] = {str(nu): r["max_deviation"] for nu, r in rep.items()}
        for nu, r in rep.items():
            for i, (f, d) in enumerate(zip(r["fidelities"], r["deviations"])):
                rows.append((float(dt), nu, i + 1, f, d))
    meta = {"memory": {"label": mem.label, "T1": mem.T1, "T2": mem.T2}, "max_deviation": summary,
            "reference_nu": max(cfg["nus"])}
    return ("dt_ms", "nu", "round", "fidelity", "deviation"), rows, meta


def cmd_gen_latency(cfg):
    samples = synthetic_latencies(cfg["count"], _rng(cfg), median_ms=cfg["median_ms"], sigma=cfg["sigma"])
    return samples


HANDLERS = {
    "decay-curve": cmd_decay_curve,
    "trajectory": cmd_trajectory,
    "epc-heatmap": cmd_epc_heatmap,
    "rate-sweep": cmd_rate_sweep,
    "convergence": cmd_convergence,
}


def run(command, cfg):
    """Execute a resolved config; returns the rendered text (or None for file-only output)."""
    if command == "gen-latency":
        samples = cmd_gen_latency(cfg)
        meta = _plain({"command": command, "version": __version__, "config": _recorded(cfg)})
        if cfg["format"] == "json":
            text = json.dumps({"metadata": meta, "latency_ms": _plain(samples)}, sort_keys=True, indent=1) + "\n"
            _emit(text, cfg.get("out"))
            return text
        out = cfg.get("out")
        if out is None or out == "-":
            buf = io.StringIO()
            buf.write("latency_ms\n")
            buf.writelines(repr(float(v)) + "\n" for v in samples)
            sys.stdout.write(buf.getvalue())
            return buf.getvalue()
        write_latency_csv(out, samples)
        Path(str(out) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n",
                                                 encoding="utf-8")
        return None
    columns, rows, meta = HANDLERS[command](cfg)
    text = render(command, cfg, columns, rows, meta, cfg["format"])
    _emit(text, cfg.get("out"))
    return text


def build_parser():
    parser = argparse.ArgumentParser(prog="eppsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"eppsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=["csv", "json"])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    raw = {}
    try:
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: not valid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{args.config}: top level must be a JSON object")
        cfg = resolve_config(args.command, raw, seed=args.seed, out=args.out, format=args.format)
        run(args.command, cfg)
    except ConfigError as exc:
        print(f"eppsim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
