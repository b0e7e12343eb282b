"""TOML run configuration: parsing, validation and a canonical echo."""

from __future__ import annotations

import dataclasses
import difflib
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .flow import CheckConfig, ConfigError, FlowConfig, InitialData
from .verify import CHECK_IDS

# section -> {key: required}
SCHEMA: dict[str, dict[str, bool]] = {
    "profile": {"name": False, "table": False, "s_base": False},
    "leaf": {"n": True, "K_M": False, "domain": True, "a": False, "b": False, "R": False},
    "grid": {"points": True},
    "time": {"t_end": True, "scheme": False, "cfl_safety": False, "dt_max": False},
    "initial": {"kind": True, "c": True, "amplitude": False},
    "checks": {"enabled": False, "eps_slack": False, "osc_slack": False, "companion_gap": False,
               "residual_every": False, "kappa_C0": False},
    "output": {"dir": False},
}
REQUIRED_SECTIONS = ("profile", "leaf", "grid", "time", "initial")


def _nearest(key: str, options) -> str:
    hits = difflib.get_close_matches(key, list(options), n=1, cutoff=0.0)
    return hits[0] if hits else ""


def _all_keys() -> list[str]:
    return [f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys]


def _num(sec: str, key: str, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{sec}] {key} must be a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"[{sec}] {key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def config_from_dict(data: dict, base_dir: Path | None = None) -> FlowConfig:
    for sec, body in data.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]; nearest valid section is [{_nearest(sec, SCHEMA)}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key in body:
            if key not in SCHEMA[sec]:
                near = _nearest(key, SCHEMA[sec])
                glob = _nearest(key, _all_keys())
                hint = f"nearest valid key is '{sec}.{near}'"
                if glob and glob != f"{sec}.{near}":
                    hint += f" (closest overall: '{glob}')"
                raise ConfigError(f"unknown key '{sec}.{key}': {hint}")
    for sec in REQUIRED_SECTIONS:
        if sec not in data:
            raise ConfigError(f"missing required section [{sec}]")
    for sec, keys in SCHEMA.items():
        for key, req in keys.items():
            if req and key not in data.get(sec, {}):
                raise ConfigError(f"missing required key '{sec}.{key}'")

    prof = data["profile"]
    if ("name" in prof) == ("table" in prof):
        raise ConfigError("[profile] needs exactly one of 'name' or 'table'")
    table = prof.get("table")
    if table is not None:
        tp = Path(table)
        if not tp.is_absolute() and base_dir is not None:
            tp = base_dir / tp
        table = str(tp)
    leaf = data["leaf"]
    domain = leaf["domain"]
    kw: dict = {}
    if domain == "interval":
        for k in ("a", "b"):
            if k not in leaf:
                raise ConfigError(f"interval domain needs 'leaf.{k}'")
        kw.update(a=_num("leaf", "a", leaf["a"]), b=_num("leaf", "b", leaf["b"]))
    elif domain == "ball":
        if "R" not in leaf:
            raise ConfigError("ball domain needs 'leaf.R'")
        kw["R"] = _num("leaf", "R", leaf["R"])
    else:
        raise ConfigError(f"leaf.domain must be 'interval' or 'ball', got {domain!r}")

    tm = data["time"]
    ini = data["initial"]
    chk = data.get("checks", {})
    enabled = chk.get("enabled", ["all"])
    if isinstance(enabled, str):
        enabled = [enabled]
    if list(enabled) == ["all"]:
        enabled = list(CHECK_IDS)
    for c in enabled:
        if c not in CHECK_IDS:
            raise ConfigError(f"unknown check '{c}'; nearest valid check is '{_nearest(c, CHECK_IDS)}'")
    d = CheckConfig()
    checks = CheckConfig(
        enabled=tuple(c for c in CHECK_IDS if c in set(enabled)),
        eps_slack=_num("checks", "eps_slack", chk.get("eps_slack", d.eps_slack)),
        osc_slack=_num("checks", "osc_slack", chk.get("osc_slack", d.osc_slack)),
        companion_gap=_num("checks", "companion_gap", chk.get("companion_gap", d.companion_gap)),
        residual_every=_num("checks", "residual_every", chk.get("residual_every", d.residual_every), int),
        kappa_C0=_num("checks", "kappa_C0", chk.get("kappa_C0", d.kappa_C0)),
    )
    if checks.kappa_C0 <= 0.0:
        raise ConfigError("checks.kappa_C0 must be positive")
    if checks.residual_every < 1:
        raise ConfigError("checks.residual_every must be at least 1")
    dflt = FlowConfig()
    cfg = FlowConfig(
        profile=prof.get("name"),
        table=table,
        s_base=None if "s_base" not in prof else _num("profile", "s_base", prof["s_base"]),
        n=_num("leaf", "n", leaf["n"], int),
        K_M=_num("leaf", "K_M", leaf.get("K_M", 0.0)),
        domain=domain,
        points=_num("grid", "points", data["grid"]["points"], int),
        t_end=_num("time", "t_end", tm["t_end"]),
        scheme=str(tm.get("scheme", dflt.scheme)),
        cfl_safety=_num("time", "cfl_safety", tm.get("cfl_safety", dflt.cfl_safety)),
        dt_max=_num("time", "dt_max", tm.get("dt_max", dflt.dt_max)),
        initial=InitialData(str(ini["kind"]), _num("initial", "c", ini["c"]),
                            _num("initial", "amplitude", ini.get("amplitude", 0.0))),
        checks=checks,
        out_dir=data.get("output", {}).get("dir"),
        **kw,
    )
    if cfg.initial.kind == "constant" and cfg.initial.amplitude != 0.0:
        raise ConfigError("constant initial data takes no amplitude")
    return cfg


def parse_config(path: str | Path) -> FlowConfig:
    """Read and validate a TOML run configuration.

    Validation covers the schema, value ranges, the leaf, the profile and the
    initial data (spacelike with margin, inside I).
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(data, path.parent)
    try:
        cfg.setup()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_echo(cfg: FlowConfig, s_base: float | None = None) -> dict:
    """All settings with defaults materialised, in the file's section layout.

    ``s_base`` fills in the effective base point when the file leaves it unset.
    """
    c = cfg.checks
    leaf = {"n": cfg.n, "K_M": cfg.K_M, "domain": cfg.domain}
    if cfg.domain == "ball":
        leaf["R"] = cfg.R
    else:
        leaf.update(a=cfg.a, b=cfg.b)
    prof = {"name": cfg.profile} if cfg.table is None else {"table": cfg.table}
    prof["s_base"] = cfg.s_base if cfg.s_base is not None else s_base
    return {
        "profile": prof,
        "leaf": leaf,
        "grid": {"points": cfg.points},
        "time": {"t_end": cfg.t_end, "scheme": cfg.scheme, "cfl_safety": cfg.cfl_safety,
                 "dt_max": cfg.dt_max},
        "initial": dataclasses.asdict(cfg.initial),
        "checks": {"enabled": list(c.enabled), "eps_slack": c.eps_slack, "osc_slack": c.osc_slack,
                   "companion_gap": c.companion_gap, "residual_every": c.residual_every,
                   "kappa_C0": c.kappa_C0},
        "output": {"dir": cfg.out_dir},
    }
