"""
Command-line front end.

    echodiff simulate {2ppe-exp,2ppe-integral,3ppe,mc} --config run.json --out trace.csv
    echodiff fit {decay,surface,3ppe} --config fit.json --out report.json
    echodiff sweep {linewidth-vs-B,linewidth-vs-T} --config sweep.json --out curve.csv

Configs are JSON. Physical quantities are numbers in SI or strings with a
unit ("50 ns", "0.376 MHz/decade"). `--set a.b=value` overrides any field;
the value is parsed as JSON when possible. Every run writes a manifest next
to its main output, and a manifest can be passed back as `--config`.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .echo import (
    THREE_PULSE,
    TWO_PULSE,
    EchoTrace,
    ThreePulseConfig,
    simulate_2ppe_exponential,
    simulate_2ppe_integral,
    simulate_3ppe,
)
from .fitting import (
    FitError,
    fit_3ppe_diffusion,
    fit_exponential_decay,
    fit_linewidth_surface,
    surface_params,
)
from .io import (
    ConfigError,
    DataError,
    apply_override,
    load_config,
    manifest,
    read_table,
    to_si,
    write_json,
    write_table,
)
from .mc import MCEnsembleConfig, PerturberClass, mc_echo_2ppe
from .model import (
    PARAM_NAMES,
    DomainError,
    Environment,
    ModelParams,
    TLSDistribution,
    calibrate_gamma_max,
    effective_linewidth,
    reference_params,
)
from .quadrature import ConvergenceError, DegenerateDomainError, IntegrationPlan

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BUNDLED_PREFIX = "bundled:"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config blocks: field -> dimension ("raw", "int", "bool", "str" or a unit dimension)

PARAM_FIELDS = {
    "gamma0": "frequency", "alpha0": "frequency", "n": "raw", "g_env": "raw",
    "c1": "raw", "c2": "raw", "gammaS0": "frequency", "gammaS_slope": "frequency_per_field",
    "reference": "bool", "gamma_max": "frequency",
    "alpha1_over_gmax": "frequency", "alpha2_over_gmax": "raw",
}
TLS_FIELDS = {"r_min": "frequency", "r_max_coeff": "raw", "e_max_factor": "raw", "normalize": "bool"}
PLAN_FIELDS = {"rel_tol": "raw", "abs_tol": "raw", "max_subdivisions": "int",
               "r_grid_kind": "str", "e_grid_points": "int"}
THREE_PULSE_FIELDS = {"t1_excited": "time", "tz_zeeman": "time", "beta_branch": "raw",
                      "gamma_t0": "frequency", "gamma_log": "frequency_per_decade", "t0_ref": "time"}
CLASS_FIELDS = {"flip_rate": "frequency", "e_split": "energy", "shift": "frequency", "count": "int"}
MC_FIELDS = {"n_ions": "int", "seed": "int", "temperature": "temperature", "threads": "int"}
ENV_FIELDS = {"field": "field", "temperature": "temperature"}
RANGE_FIELDS = {"start": None, "stop": None, "num": "int", "spacing": "str", "values": None}


def _block(cfg, key, fields, where=None, required=()):
    where = where or key
    block = cfg.get(key, {}) if isinstance(cfg, dict) else cfg
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    return _parse_fields(block, fields, where, required)


def _parse_fields(block, fields, where, required=()):
    out = {}
    for k, v in block.items():
        if k not in fields:
            raise ConfigError(f"{where}.{k}: unknown field (allowed: {', '.join(fields)})")
        dim = fields[k]
        loc = f"{where}.{k}"
        if v is None:
            out[k] = None
        elif dim == "raw":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{loc}: expected a number, got {v!r}")
            out[k] = float(v)
        elif dim == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{loc}: expected an integer, got {v!r}")
            out[k] = v
        elif dim == "bool":
            if not isinstance(v, bool):
                raise ConfigError(f"{loc}: expected true/false, got {v!r}")
            out[k] = v
        elif dim == "str":
            if not isinstance(v, str):
                raise ConfigError(f"{loc}: expected a string, got {v!r}")
            out[k] = v
        else:
            out[k] = to_si(v, dim, loc)
    for k in required:
        if k not in out:
            raise ConfigError(f"{where}.{k}: required field missing")
    return out


def _grid(block, dim, where):
    """Sample points from {"start", "stop", "num", "spacing"} or {"values": [...]}."""
    if isinstance(block, list):
        block = {"values": block}
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a range object or a list")
    unknown = set(block) - set(RANGE_FIELDS)
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
    if "values" in block:
        vals = np.array([to_si(v, dim, f"{where}.values[{i}]") for i, v in enumerate(block["values"])])
        if vals.size == 0:
            raise UsageError(f"{where}: empty value list")
        return vals
    for k in ("start", "stop", "num"):
        if k not in block:
            raise ConfigError(f"{where}.{k}: required field missing")
    lo = to_si(block["start"], dim, f"{where}.start")
    hi = to_si(block["stop"], dim, f"{where}.stop")
    num = block["num"]
    if isinstance(num, bool) or not isinstance(num, int) or num < 2:
        raise UsageError(f"{where}.num: need an integer >= 2, got {num!r}")
    if not lo < hi:
        raise UsageError(f"{where}: start must be below stop")
    spacing = block.get("spacing", "linear")
    if spacing == "linear":
        return np.linspace(lo, hi, num)
    if spacing == "log":
        if lo <= 0:
            raise UsageError(f"{where}: log spacing needs start > 0")
        return np.geomspace(lo, hi, num)
    raise UsageError(f"{where}.spacing: expected 'linear' or 'log', got {spacing!r}")


def _quantity(cfg, key, dim, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"{key}: required field missing")
        return default
    return to_si(cfg[key], dim, key)


def parse_params(block, where="params") -> ModelParams:
    """
    ModelParams from a config block.

    "reference" (or {"reference": true, ...}) starts from the tabulated values
    with a calibrated Gamma_max; ratio-style alpha_i/Gamma_max entries are
    converted with `gamma_max`. Remaining fields override.
    """
    if block == "reference":
        block = {"reference": True}
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object or \"reference\"")
    v = _parse_fields(block, PARAM_FIELDS, where)
    gmax = v.pop("gamma_max", None)
    if v.pop("reference", False):
        base = reference_params(gmax).as_dict()
    else:
        base = ModelParams().as_dict()
    r1, r2 = v.pop("alpha1_over_gmax", None), v.pop("alpha2_over_gmax", None)
    if r1 is not None or r2 is not None:
        g = gmax if gmax is not None else calibrate_gamma_max()
        if r1 is not None:
            base["c1"] = r1 * g * g
        if r2 is not None:
            base["c2"] = r2 * g * g
    base.update(v)
    try:
        return ModelParams(**base)
    except (DomainError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _resolve_path(value, base_dir: Path) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"expected a file path, got {value!r}")
    if value.startswith(BUNDLED_PREFIX):
        return value
    p = Path(value)
    return str(p if p.is_absolute() else (base_dir / p).resolve())


def _open_data(path: str):
    if path.startswith(BUNDLED_PREFIX):
        name = path[len(BUNDLED_PREFIX):]
        ref = resources.files("echodiff") / "data" / name
        if not ref.is_file():
            raise DataError(f"{path}: no such bundled file")
        return Path(str(ref))
    return Path(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else ""


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


# --------------------------------------------------------------------------
# simulate


def _environment(cfg):
    v = _block(cfg, "environment", ENV_FIELDS, required=("field", "temperature"))
    try:
        return Environment(v["field"], v["temperature"])
    except (DomainError, ValueError) as e:
        raise ConfigError(f"environment: {e}") from None


def _three_pulse_cfg(cfg):
    v = _block(cfg, "three_pulse", THREE_PULSE_FIELDS)
    try:
        return ThreePulseConfig(**v)
    except (DomainError, ValueError) as e:
        raise ConfigError(f"three_pulse: {e}") from None


def _delays(cfg):
    if "delays" not in cfg:
        raise ConfigError("delays: required field missing")
    return _grid(cfg["delays"], "time", "delays")


def _simulate(kind, cfg):
    """Returns (trace, resolved, seed)."""
    t = _delays(cfg)
    i0 = _quantity(cfg, "i0", "intensity", 1.0)
    if kind == "2ppe-exp":
        _check_keys(cfg, {"delays", "gamma_h", "i0"})
        g = _quantity(cfg, "gamma_h", "frequency")
        return simulate_2ppe_exponential(t, g, i0), {"gamma_h": g, "i0": i0}, None
    if kind == "2ppe-integral":
        _check_keys(cfg, {"delays", "params", "environment", "gamma_max", "tls", "plan", "i0"})
        p = parse_params(cfg.get("params"))
        env = _environment(cfg)
        dist = TLSDistribution(**_block(cfg, "tls", TLS_FIELDS))
        plan = IntegrationPlan(**_block(cfg, "plan", PLAN_FIELDS))
        gmax = _quantity(cfg, "gamma_max", "frequency")
        tr = simulate_2ppe_integral(t, p, dist, env, gmax, plan, i0)
        return tr, {"params": p.as_dict(), "gamma_max": gmax, "i0": i0,
                    "tls": dist.__dict__, "plan": plan.__dict__}, None
    if kind == "3ppe":
        _check_keys(cfg, {"delays", "t12", "three_pulse", "i0", "strict"})
        t12 = _quantity(cfg, "t12", "time")
        c = _three_pulse_cfg(cfg)
        strict = bool(cfg.get("strict", False))
        tr = simulate_3ppe(t, t12, c, i0, strict=strict)
        return tr, {"t12": t12, "three_pulse": c.__dict__, "i0": i0, "strict": strict}, None
    if kind == "mc":
        _check_keys(cfg, {"delays", "mc", "classes"})
        m = _block(cfg, "mc", MC_FIELDS)
        threads = m.pop("threads", None)
        raw = cfg.get("classes")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("classes: expected a non-empty list of perturber classes")
        classes = [PerturberClass(**_parse_fields(c, CLASS_FIELDS, f"classes[{i}]", ("flip_rate",)))
                   for i, c in enumerate(raw)]
        mcfg = MCEnsembleConfig(classes, **m)
        tr = mc_echo_2ppe(t, mcfg, threads=threads)
        return tr, {"mc": {"n_ions": mcfg.n_ions, "seed": mcfg.seed, "temperature": mcfg.temperature},
                    "classes": [c.__dict__ for c in classes]}, mcfg.seed
    raise UsageError(f"unknown simulate kind {kind!r}")


def _check_keys(cfg, allowed):
    extra = set(cfg) - set(allowed) - {"output"}
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown field (allowed: {', '.join(sorted(allowed))})")


def _trace_columns(tr: EchoTrace):
    cols = {"delay": tr.delays, "intensity": tr.intensities}
    units = {"delay": "s", "intensity": "arb"}
    if tr.stderr is not None:
        cols["stderr"] = tr.stderr
        units["stderr"] = "arb"
    return cols, units


def cmd_simulate(kind, cfg, out: Path):
    tr, resolved, seed = _simulate(kind, cfg)
    cols, units = _trace_columns(tr)
    write_table(out, cols, units)
    mpath = _sidecar(out, ".manifest.json")
    m = manifest("simulate", kind, cfg, [out], seed=seed)
    m["resolved"] = {"delays": tr.delays.tolist(), **resolved}
    write_json(mpath, m)
    return EXIT_OK


# --------------------------------------------------------------------------
# fit


def read_trace(path, kind=TWO_PULSE, t12=None) -> EchoTrace:
    """EchoTrace from a data file with delay, intensity and optional stderr columns."""
    p = _open_data(path) if isinstance(path, str) else Path(path)
    cols = read_table(p, {"delay": "time", "intensity": "intensity"}, {"stderr": "intensity"})
    try:
        return EchoTrace(cols["delay"], cols["intensity"], kind=kind, t12_fixed=t12,
                         stderr=cols.get("stderr"))
    except ValueError as e:
        raise DataError(f"{p}: {e}") from None


def _fit_decay(cfg):
    _check_keys(cfg, {"data", "first_decade_only"})
    path = cfg.get("data")
    if path is None:
        raise ConfigError("data: required field missing")
    tr = read_trace(path)
    res = fit_exponential_decay(tr, bool(cfg.get("first_decade_only", True)))
    curve = res["i0"] * np.exp(-4.0 * np.pi * res["gamma_eff"] * tr.delays)
    cols = {"delay": tr.delays, "intensity": curve}
    units = {"gamma_eff": "Hz", "i0": "arb", "t2": "s"}
    return res, cols, {"delay": "s", "intensity": "arb"}, units, [path]


def _fit_surface(cfg):
    _check_keys(cfg, {"data", "p0", "fixed", "bounds", "relative_sigma", "max_iter"})
    path = cfg.get("data")
    if path is None:
        raise ConfigError("data: required field missing")
    p = _open_data(path)
    cols = read_table(p, {"field": "field", "temperature": "temperature", "linewidth": "frequency"},
                      {"sigma": "frequency"})
    y = cols["linewidth"]
    if "sigma" in cols:
        sig = cols["sigma"]
    elif "relative_sigma" in cfg:
        sig = float(cfg["relative_sigma"]) * np.abs(y)
    else:
        raise DataError(f"{p}: column not found: 'sigma' (or set relative_sigma)")
    try:
        envs = [Environment(b, T) for b, T in zip(cols["field"], cols["temperature"])]
    except (DomainError, ValueError) as e:
        raise DataError(f"{p}: {e}") from None
    p0 = parse_params(cfg.get("p0", "reference"), "p0")
    fixed = cfg.get("fixed", ["gammaS0", "gammaS_slope"])
    if not isinstance(fixed, list) or set(fixed) - set(PARAM_NAMES):
        raise ConfigError(f"fixed: expected a list drawn from {', '.join(PARAM_NAMES)}")
    bounds = cfg.get("bounds") or {}
    if not isinstance(bounds, dict):
        raise ConfigError("bounds: expected an object")
    bounds = {k: (float("-inf") if lo is None else float(lo), float("inf") if hi is None else float(hi))
              for k, (lo, hi) in bounds.items()}
    opts = {"max_iter": int(cfg["max_iter"])} if "max_iter" in cfg else {}
    res = fit_linewidth_surface(list(zip(envs, y, sig)), p0, fixed=fixed, bounds=bounds, **opts)
    fitted = surface_params(res, p0)
    curve = np.array([effective_linewidth(e, fitted) for e in envs])
    out = {"field": cols["field"], "temperature": cols["temperature"], "linewidth": curve}
    units = {"gamma0": "Hz", "alpha0": "Hz K^-n", "n": "1", "g_env": "1", "c1": "Hz^3",
             "c2": "Hz^2 T^-1 K^-1", "gammaS0": "Hz", "gammaS_slope": "Hz/T"}
    return res, out, {"field": "T", "temperature": "K", "linewidth": "Hz"}, units, [path]


def _fit_3ppe(cfg):
    _check_keys(cfg, {"data", "t12", "three_pulse", "fixed"})
    paths = cfg.get("data")
    if isinstance(paths, str):
        paths = [paths]
    if not isinstance(paths, list) or not paths:
        raise ConfigError("data: expected a file path or a list of paths")
    t12 = cfg.get("t12")
    if t12 is None:
        raise ConfigError("t12: required field missing")
    t12s = t12 if isinstance(t12, list) else [t12] * len(paths)
    if len(t12s) != len(paths):
        raise ConfigError("t12: need one value per data file")
    t12s = [to_si(v, "time", f"t12[{i}]") for i, v in enumerate(t12s)]
    c0 = _three_pulse_cfg(cfg)
    fixed = cfg.get("fixed", [])
    traces = [read_trace(pth, THREE_PULSE, t) for pth, t in zip(paths, t12s)]
    try:
        res = fit_3ppe_diffusion(traces, c0, fixed=fixed)
    except KeyError as e:
        raise ConfigError(f"fixed: {e.args[0]}") from None
    vals = {**res.fixed, **res.values}
    fitted = ThreePulseConfig(c0.t1_excited, vals["tz_zeeman"], vals["beta_branch"], c0.gamma_t0,
                              vals["gamma_log"], c0.t0_ref)
    idx, dl, curve = [], [], []
    for k, tr in enumerate(traces):
        m = simulate_3ppe(tr.delays, tr.t12_fixed, fitted, vals[f"i0_{k}"])
        idx.append(np.full(len(tr), float(k)))
        dl.append(tr.delays)
        curve.append(m.intensities)
    out = {"trace": np.concatenate(idx), "delay": np.concatenate(dl), "intensity": np.concatenate(curve)}
    units = {"beta_branch": "1", "tz_zeeman": "s", "gamma_log": "Hz/decade", "t1_excited": "s",
             "gamma_t0": "Hz", "t0_ref": "s"}
    units.update({f"i0_{k}": "arb" for k in range(len(traces))})
    return res, out, {"trace": "", "delay": "s", "intensity": "arb"}, units, paths


def cmd_fit(kind, cfg, out: Path):
    runners = {"decay": _fit_decay, "surface": _fit_surface, "3ppe": _fit_3ppe}
    if kind not in runners:
        raise UsageError(f"unknown fit kind {kind!r}")
    res, curve, curve_units, units, inputs = runners[kind](cfg)
    report = res.to_dict()
    report["kind"] = kind
    report["units"] = units
    report["tool_version"] = __version__
    write_json(out, report)
    cpath = _sidecar(out, ".model.csv")
    write_table(cpath, curve, curve_units)
    m = manifest("fit", kind, cfg, [out, cpath])
    m["inputs"] = {str(p): _sha256(_open_data(p)) for p in inputs}
    write_json(_sidecar(out, ".manifest.json"), m)
    if not res.converged:
        print(f"echodiff: fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


def cmd_sweep(kind, cfg, out: Path):
    _check_keys(cfg, {"params", "field", "temperature"})
    p = parse_params(cfg.get("params", "reference"))
    if kind == "linewidth-vs-B":
        xs = _grid(cfg.get("field"), "field", "field") if "field" in cfg else None
        if xs is None:
            raise ConfigError("field: required sweep range missing")
        T = _quantity(cfg, "temperature", "temperature")
        envs = [Environment(b, T) for b in xs]
        name, unit = "field", "T"
    elif kind == "linewidth-vs-T":
        if "temperature" not in cfg:
            raise ConfigError("temperature: required sweep range missing")
        xs = _grid(cfg["temperature"], "temperature", "temperature")
        B = _quantity(cfg, "field", "field")
        if np.any(xs <= 0):
            raise UsageError("temperature: sweep values must be > 0")
        envs = [Environment(B, T) for T in xs]
        name, unit = "temperature", "K"
    else:
        raise UsageError(f"unknown sweep quantity {kind!r}")
    ys = np.array([effective_linewidth(e, p) for e in envs])
    write_table(out, {name: xs, "linewidth": ys}, {name: unit, "linewidth": "Hz"})
    m = manifest("sweep", kind, cfg, [out])
    m["resolved"] = {"params": p.as_dict()}
    write_json(_sidecar(out, ".manifest.json"), m)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="echodiff", description="Photon-echo spectral-diffusion toolkit.")
    parser.add_argument("--version", action="version", version=f"echodiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kinds = {
        "simulate": ("2ppe-exp", "2ppe-integral", "3ppe", "mc"),
        "fit": ("decay", "surface", "3ppe"),
        "sweep": ("linewidth-vs-B", "linewidth-vs-T"),
    }
    helps = {"simulate": "simulate an echo trace", "fit": "fit data and write a report",
             "sweep": "evaluate the linewidth model over a grid"}
    for cmd, choices in kinds.items():
        sp = sub.add_parser(cmd, help=helps[cmd])
        sp.add_argument("kind", choices=choices)
        sp.add_argument("--config", type=Path, help="JSON config or run manifest")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (dotted keys; value parsed as JSON)")
        sp.add_argument("--out", type=Path, help="main output path (default: from config 'output')")
        if cmd == "fit":
            sp.add_argument("--data", action="append", help="data file(s); overrides config 'data'")
    return parser


def _prepare_config(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    cfg = copy.deepcopy(cfg)
    base_dir = args.config.resolve().parent if args.config else Path.cwd()
    for s in args.overrides:
        apply_override(cfg, s)
    if getattr(args, "data", None):
        cfg["data"] = args.data if len(args.data) > 1 else args.data[0]
        base_dir = Path.cwd()
    if "data" in cfg:
        d = cfg["data"]
        cfg["data"] = [_resolve_path(x, base_dir) for x in d] if isinstance(d, list) else _resolve_path(d, base_dir)
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _prepare_config(args)
        out = args.out or cfg.get("output")
        if out is None:
            raise UsageError("no output path: pass --out or set 'output' in the config")
        out = Path(out)
        cfg["output"] = str(out)
        handler = {"simulate": cmd_simulate, "fit": cmd_fit, "sweep": cmd_sweep}[args.command]
        return handler(args.kind, cfg, out)
    except DataError as e:
        print(f"echodiff: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, DomainError, DegenerateDomainError, TypeError) as e:
        print(f"echodiff: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"echodiff: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
