"""Command-line frontend: ``paneliv {estimate,build-instrument,simulate,describe}``.

Every option can be given in a JSON config file (``--config``) under the
key shown in ``--help``; command-line flags override the file. Unknown
keys are errors.

Exit status: 0 success, 2 configuration, 3 data, 4 estimation, 5 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from .diagnostics import GridPolicy, diagnose
from .errors import ConfigError, DataError, PanelIVError
from .instrument import build_instrument, file_digest, load_distance_csv, load_rate_csv
from .panel import SampleFilter, Transform, apply_transforms, describe, load_panel_csv, write_panel_csv
from .regression import CovarianceSettings, ModelSpec, fe_ols
from .reporting import TableLayout, format_table
from .simulation import DgpConfig, run_experiment

log = logging.getLogger("paneliv")

REMEDY = {
    "config": "check the config keys and values listed by --help",
    "data": "inspect the input files named in the message",
    "estimation": "check for collinear regressors, constant instruments or too few observations",
    "internal": "please report this with the config that triggered it",
}


class Key:
    def __init__(self, kind, default=None, help="", required=False):
        self.kind, self.default, self.help, self.required = kind, default, help, required


def _path(required=False, help=""):
    return Key("path", None, help, required)


SAMPLE_KEYS = {
    "period_range": Key("intpair", None, "inclusive first,last period of the sample"),
    "entities": Key("strlist", None, "entity allowlist"),
    "group": Key("str", None, "emission cluster to keep: low, medium or high"),
}

PANEL_KEYS = {
    "panel": _path(True, "panel CSV (long format)"),
    "entity_col": Key("str", "entity", "entity column of the panel CSV"),
    "time_col": Key("str", "year", "time column of the panel CSV"),
    "transforms": Key("json", [], 'JSON list of {"kind","source","output","k"} transforms'),
}

COMMANDS = {
    "estimate": {
        **PANEL_KEYS,
        "dependent": Key("str", None, "dependent variable", True),
        "exogenous": Key("strlist", [], "included exogenous regressors, in reporting order"),
        "endogenous": Key("str", None, "endogenous regressor"),
        "instruments": Key("strlist", [], "excluded instruments"),
        "fixed_effects": Key("strlist", ["entity", "time"], "fixed effects: entity,time"),
        "covariance": Key("str", "robust", "classical, robust (HC1) or cluster (by entity)"),
        **SAMPLE_KEYS,
        "ar_level": Key("float", 0.95, "confidence level of the Anderson-Rubin set"),
        "ar_beta0": Key("float", 0.0, "null value for the reported AR test"),
        "digits": Key("int", 3, "decimal places in tables"),
        "out_text": _path(help="write the text table here"),
        "out_csv": _path(help="write the CSV table here"),
        "out_latex": _path(help="write the LaTeX table here"),
        "out_json": _path(help="write full results as JSON here"),
    },
    "build-instrument": {
        "distances": _path(True, "distance CSV with entity_a, entity_b, distance_km"),
        "openness": _path(True, "openness panel CSV"),
        "openness_col": Key("str", None, "openness column (default: the only value column)"),
        "rates": _path(True, "rate CSV with time and rate columns"),
        "rate_col": Key("str", "rate", "rate column of the rate CSV"),
        "entity_col": Key("str", "entity", "entity column of panel CSVs"),
        "time_col": Key("str", "year", "time column of panel and rate CSVs"),
        "window": Key("intpair", [1991, 2015], "inclusive averaging window first,last"),
        "panel": _path(help="panel CSV to merge the instrument into"),
        "targets": Key("strlist", None, "entities to build the instrument for (default: panel or openness entities)"),
        "include_self": Key("bool", False, "include the target's own openness"),
        "self_distance_km": Key("float", None, "within-entity distance for include_self"),
        "instrument_name": Key("str", "z", "name of the instrument column"),
        "output": _path(True, "output CSV"),
        "provenance": _path(help="provenance JSON (default: <output>.provenance.json)"),
    },
    "simulate": {
        **{f.name: Key({int: "int", float: "float"}[type(f.default)], f.default, "DGP parameter")
           for f in fields(DgpConfig)},
        "reps": Key("int", 500, "number of replications"),
        "workers": Key("int", 1, "worker processes"),
        "level": Key("float", 0.95, "AR confidence level"),
        "covariance": Key("str", "robust", "classical, robust or cluster"),
        "out_json": _path(help="write the report as JSON here"),
        "out_text": _path(help="write the text report here"),
    },
    "describe": {
        "panel": _path(True, "panel CSV (long format)"),
        "entity_col": Key("str", "entity", "entity column"),
        "time_col": Key("str", "year", "time column"),
        "variables": Key("strlist", None, "variables to summarise (default: all)"),
        **SAMPLE_KEYS,
        "out_csv": _path(help="write the summary as CSV here"),
    },
}


def _convert(kind, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in ("str", "path"):
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "strlist":
            return [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "intpair":
            parts = [int(s) for s in raw.split(",")]
            if len(parts) != 2:
                raise ValueError(raw)
            return parts
        return json.loads(raw)
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"bad value {raw!r} for {key} (expected {kind})") from None


def _check_type(kind, value, key):
    ok = {
        "str": lambda v: isinstance(v, str),
        "path": lambda v: isinstance(v, str),
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "strlist": lambda v: isinstance(v, list) and all(isinstance(s, str) for s in v),
        "intpair": lambda v: isinstance(v, list) and len(v) == 2 and all(isinstance(s, int) for s in v),
        "json": lambda v: True,
    }[kind]
    if value is not None and not ok(value):
        raise ConfigError(f"config key {key!r} expects {kind}, got {value!r}")


def resolve_config(command, file_cfg, flag_cfg):
    """Merge defaults, config file and flags (flags win); validate keys and types."""
    keys = COMMANDS[command]
    unknown = sorted(set(file_cfg) - set(keys))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {k: spec.default for k, spec in keys.items()}
    cfg.update(file_cfg)
    cfg.update({k: _convert(keys[k].kind, v, k) for k, v in flag_cfg.items()})
    for k, spec in keys.items():
        if spec.kind == "float" and isinstance(cfg[k], int) and not isinstance(cfg[k], bool):
            cfg[k] = float(cfg[k])
        _check_type(spec.kind, cfg[k], k)
        if spec.required and cfg[k] is None:
            raise ConfigError(f"missing required key {k!r}")
    return cfg


def _require_files(cfg, command):
    for k, spec in COMMANDS[command].items():
        if spec.kind == "path" and not k.startswith("out") and k not in ("output", "provenance"):
            if cfg[k] is not None and not os.path.exists(cfg[k]):
                raise ConfigError(f"{k}: file not found: {cfg[k]}")


class Outputs:
    """Collect output files and write them only once everything succeeded."""

    def __init__(self):
        self.items = []

    def add(self, path, text):
        if path:
            self.items.append((path, text))

    def commit(self):
        tmps = []
        try:
            for path, text in self.items:
                tmp = f"{path}.tmp{os.getpid()}"
                with open(tmp, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                tmps.append((tmp, path))
            for tmp, path in tmps:
                os.replace(tmp, path)
        finally:
            for tmp, _ in tmps:
                if os.path.exists(tmp):
                    os.remove(tmp)


def _sample_filter(cfg):
    return SampleFilter(
        period_range=tuple(cfg["period_range"]) if cfg.get("period_range") else None,
        entities=cfg.get("entities"),
        group=cfg.get("group"),
    )


def _load_panel(cfg):
    ds = load_panel_csv(cfg["panel"], cfg["entity_col"], cfg["time_col"])
    transforms = cfg.get("transforms") or []
    if not isinstance(transforms, list) or not all(isinstance(t, dict) for t in transforms):
        raise ConfigError("transforms must be a list of objects")
    return apply_transforms(ds, [Transform.from_dict(t) for t in transforms])


# ---------------------------------------------------------------- commands


def cmd_estimate(cfg, out=sys.stdout):
    spec = ModelSpec(
        dependent=cfg["dependent"],
        exogenous=tuple(cfg["exogenous"]),
        endogenous=cfg["endogenous"],
        instruments=tuple(cfg["instruments"]),
        fixed_effects=tuple(cfg["fixed_effects"]),
        covariance=CovarianceSettings(cfg["covariance"]),
        filter=_sample_filter(cfg),
    )
    if not 0 < cfg["ar_level"] < 1:
        raise ConfigError("ar_level must lie in (0, 1)")
    for t in cfg.get("transforms") or []:
        if isinstance(t, dict):
            Transform.from_dict(t)
    _require_files(cfg, "estimate")
    ds = _load_panel(cfg)
    fe = fe_ols(spec, ds)
    columns = [("FE", fe)]
    payload = {"spec": _spec_dict(spec), "fe": fe.to_dict()}
    if spec.endogenous:
        iv, first = diagnose(spec, ds, level=cfg["ar_level"], beta0=cfg["ar_beta0"], grid=GridPolicy())
        columns += [("IV", iv), ("First stage", first)]
        payload["iv"] = iv.to_dict()
        payload["first_stage"] = first.to_dict()
    layout = TableLayout(columns, digits=cfg["digits"])
    text = format_table(layout, "text")
    outputs = Outputs()
    outputs.add(cfg["out_text"], text)
    outputs.add(cfg["out_csv"], format_table(layout, "csv"))
    outputs.add(cfg["out_latex"], format_table(layout, "latex"))
    outputs.add(cfg["out_json"], json.dumps(payload, indent=2) + "\n")
    outputs.commit()
    out.write(text)
    return 0


def _spec_dict(spec):
    f = spec.filter
    return {
        "dependent": spec.dependent,
        "exogenous": list(spec.exogenous),
        "endogenous": spec.endogenous,
        "instruments": list(spec.instruments),
        "fixed_effects": list(spec.fixed_effects),
        "covariance": spec.covariance.kind,
        "period_range": list(f.period_range) if f.period_range else None,
        "entities": list(f.entities) if f.entities else None,
        "group": f.group,
    }


def cmd_build_instrument(cfg, out=sys.stdout):
    lo, hi = cfg["window"]
    if lo > hi:
        raise ConfigError(f"empty window {lo}-{hi}")
    _require_files(cfg, "build-instrument")
    D = load_distance_csv(cfg["distances"])
    K = load_panel_csv(cfg["openness"], cfg["entity_col"], cfg["time_col"])
    rates = load_rate_csv(cfg["rates"], cfg["time_col"], cfg["rate_col"])
    panel = load_panel_csv(cfg["panel"], cfg["entity_col"], cfg["time_col"]) if cfg["panel"] else None
    targets = cfg["targets"]
    if targets is None and panel is not None:
        targets = list(panel.entities)
    digests = {k: file_digest(cfg[k]) for k in ("distances", "openness", "rates")}
    inst = build_instrument(D, K, rates, (lo, hi), targets=targets, include_self=cfg["include_self"],
                            self_distance=cfg["self_distance_km"], openness_col=cfg["openness_col"],
                            source_digests=digests)
    name = cfg["instrument_name"]
    merged = inst.merge_into(panel, name) if panel is not None else inst.to_panel(name)
    tmp_csv = f"{cfg['output']}.build{os.getpid()}"
    try:
        write_panel_csv(merged, tmp_csv, cfg["entity_col"], cfg["time_col"])
        with open(tmp_csv, encoding="utf-8") as fh:
            csv_text = fh.read()
    finally:
        if os.path.exists(tmp_csv):
            os.remove(tmp_csv)
    prov = dict(inst.provenance)
    prov["instrument_name"] = name
    prov["inputs"] = {k: os.path.basename(cfg[k]) for k in ("distances", "openness", "rates")}
    prov["kopen_bar"] = {e: inst.kopen_bar[e] for e in inst.entities}
    outputs = Outputs()
    outputs.add(cfg["output"], csv_text)
    outputs.add(cfg["provenance"] or cfg["output"] + ".provenance.json", json.dumps(prov, indent=2) + "\n")
    outputs.commit()
    out.write(f"built {name} for {len(inst.entities)} entities x {len(inst.periods)} periods -> {cfg['output']}\n")
    return 0


def cmd_simulate(cfg, out=sys.stdout):
    dgp = DgpConfig.from_dict({f.name: cfg[f.name] for f in fields(DgpConfig)})
    if cfg["reps"] < 1:
        raise ConfigError("reps must be at least 1")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    report = run_experiment(dgp, cfg["reps"], level=cfg["level"], covariance=cfg["covariance"],
                            workers=cfg["workers"])
    log.info("simulation finished in %.2f s", report.wall_clock_s)
    text = report.to_text()
    outputs = Outputs()
    outputs.add(cfg["out_json"], report.to_json())
    outputs.add(cfg["out_text"], text)
    outputs.commit()
    out.write(text)
    return 0


def cmd_describe(cfg, out=sys.stdout):
    _require_files(cfg, "describe")
    ds = load_panel_csv(cfg["panel"], cfg["entity_col"], cfg["time_col"])
    rows = describe(ds, cfg["variables"], _sample_filter(cfg))
    head = f"{'variable':<24}{'N':>8}{'mean':>14}{'sd':>14}{'min':>14}{'max':>14}"
    lines = [head, "-" * len(head)]
    lines += [f"{r['variable']:<24}{r['n']:>8}{r['mean']:>14.4f}{r['sd']:>14.4f}{r['min']:>14.4f}{r['max']:>14.4f}"
              for r in rows]
    text = "\n".join(lines) + "\n"
    csv_text = "variable,n,mean,sd,min,max\n" + "".join(
        f"{r['variable']},{r['n']},{r['mean']!r},{r['sd']!r},{r['min']!r},{r['max']!r}\n" for r in rows)
    outputs = Outputs()
    outputs.add(cfg["out_csv"], csv_text)
    outputs.commit()
    out.write(text)
    return 0


HANDLERS = {
    "estimate": cmd_estimate,
    "build-instrument": cmd_build_instrument,
    "simulate": cmd_simulate,
    "describe": cmd_describe,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="paneliv", description="Panel fixed-effects and IV estimation toolkit.",
                                     epilog="Exit status: 0 success, 2 config, 3 data, 4 estimation, 5 internal.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, help=f"{name} (see '{name} --help' for config keys)",
                           description=f"Config keys (JSON file via --config, or as flags): {', '.join(keys)}")
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key, spec in keys.items():
            default = "" if spec.default in (None, [], "") else f" [default: {spec.default}]"
            req = " (required)" if spec.required else ""
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                           metavar=spec.kind.upper(), help=f"config key '{key}': {spec.help}{req}{default}")
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        file_cfg = {}
        if config_path:
            try:
                with open(config_path, encoding="utf-8") as fh:
                    file_cfg = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {config_path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(command, file_cfg, args)
        return HANDLERS[command](cfg, out)
    except PanelIVError as exc:
        sys.stderr.write(f"error [{exc.category}]: {exc}\n  remedy: {REMEDY[exc.category]}\n")
        return exc.exit_code
    except OSError as exc:
        err = DataError(str(exc))
        sys.stderr.write(f"error [data]: {err}\n  remedy: {REMEDY['data']}\n")
        return err.exit_code
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"error [internal]: {type(exc).__name__}: {exc}\n  remedy: {REMEDY['internal']}\n")
        return 5


if __name__ == "__main__":
    sys.exit(main())
