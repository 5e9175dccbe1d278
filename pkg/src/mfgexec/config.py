"""Strict scenario configuration: parse, emit, convert.

The on-disk format is an INI document with one [population] section, one
[population.subpop.N] section per class (numbered from 1), a [market]
section, and a [run] section.  Parsing is strict in both directions:
a missing required key and an unrecognized key are both errors naming
the section and key, so typos cannot silently fall back to defaults.

Indices are 1-based everywhere in the file (subpop section numbers and
the state indices inside forced_theta), matching the column naming of
the CSV outputs; internally everything is 0-based.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (GameSpec, LatentMarketModel, PopulationSpec,
                    SubPopulationSpec, TimeGrid, ValidationError, validate)


class ConfigError(ValidationError):
    """Configuration document does not conform to the schema."""


_MODES = ("equilibrium", "simulate", "nash-gap", "filter-demo")

_RUN_DEFAULTS = {
    "n_steps": 1000,
    "seed": 0,
    "replications": 1,
    "out_dir": "out",
    "figures": True,
    "nash_n_values": (5, 10, 30, 100, 300),
    "forced_theta": None,
    "target_shift": None,
}


@dataclass(frozen=True)
class SubpopConfig:
    a: float
    phi: float
    psi: float
    p: float
    m0: float
    s0: float
    n_agents: int


@dataclass(frozen=True)
class MarketConfig:
    theta_states: tuple
    generator: tuple            # row-major tuple of tuples
    prior: tuple
    kappa: float
    sigma: float
    alpha_tick: float
    f0: float
    horizon: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed configuration document plus run controls."""

    lam: float
    subpops: tuple              # of SubpopConfig
    market: MarketConfig
    mode: str
    n_steps: int
    seed: int
    replications: int
    out_dir: str
    figures: bool
    nash_n_values: tuple
    forced_theta: Optional[tuple]   # of (time, 0-based state index)
    target_shift: Optional[float]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _convert(section: str, key: str, raw: str, conv, what: str):
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"key '{key}' in [{section}] is not a valid {what}: {raw!r}")


def _take(sec_map: dict, section: str, key: str, conv, what: str):
    if key not in sec_map:
        raise ConfigError(f"missing key '{key}' in [{section}]")
    return _convert(section, key, sec_map.pop(key), conv, what)


def _take_optional(sec_map: dict, section: str, key: str, conv, what: str,
                   default):
    if key not in sec_map:
        return default
    return _convert(section, key, sec_map.pop(key), conv, what)


def _float_list(raw: str):
    return tuple(float(x) for x in raw.split())


def _int_list(raw: str):
    return tuple(int(x) for x in raw.split())


def _matrix(raw: str):
    rows = [r.strip() for r in raw.split(";") if r.strip()]
    return tuple(_float_list(r) for r in rows)


def _forced_theta(raw: str):
    out = []
    for item in raw.split():
        when, state = item.split(":")
        state_index = int(state)
        if state_index < 1:
            raise ValueError(state)
        out.append((float(when), state_index - 1))
    return tuple(out)


def _bool(raw: str):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


def _mode(raw: str):
    if raw not in _MODES:
        raise ValueError(raw)
    return raw


def _expect_keys(sec_map: dict, section: str, required, optional=()):
    # unknown keys first, so a typo is reported as the typo itself
    allowed = set(required) | set(optional)
    for key in sorted(sec_map):
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [{section}]")
    for key in required:
        if key not in sec_map:
            raise ConfigError(f"missing key '{key}' in [{section}]")


def parse_config_string(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}")

    sections = set(parser.sections())
    subpop_names = sorted(s for s in sections
                          if s.startswith("population.subpop."))
    known = {"population", "market", "run"} | set(subpop_names)
    for name in sorted(sections - known):
        raise ConfigError(f"unknown section [{name}]")
    for required in ("population", "market", "run"):
        if required not in sections:
            raise ConfigError(f"missing section [{required}]")
    if not subpop_names:
        raise ConfigError("no [population.subpop.N] sections found")
    indices = []
    for name in subpop_names:
        suffix = name.rsplit(".", 1)[1]
        if not suffix.isdigit() or int(suffix) < 1:
            raise ConfigError(f"bad sub-population section name [{name}]")
        indices.append(int(suffix))
    if sorted(indices) != list(range(1, len(indices) + 1)):
        raise ConfigError("sub-population sections must be numbered "
                          "1..K without gaps")

    pop_map = dict(parser["population"])
    _expect_keys(pop_map, "population", required=("lambda",))
    lam = _take(pop_map, "population", "lambda", float, "number")

    subpop_keys = ("a", "phi", "psi", "p", "m0", "s0", "n_agents")
    subpops = []
    for i in range(1, len(indices) + 1):
        name = f"population.subpop.{i}"
        sec = dict(parser[name])
        _expect_keys(sec, name, required=subpop_keys)
        subpops.append(SubpopConfig(
            a=_take(sec, name, "a", float, "number"),
            phi=_take(sec, name, "phi", float, "number"),
            psi=_take(sec, name, "psi", float, "number"),
            p=_take(sec, name, "p", float, "number"),
            m0=_take(sec, name, "m0", float, "number"),
            s0=_take(sec, name, "s0", float, "number"),
            n_agents=_take(sec, name, "n_agents", int, "integer"),
        ))

    mk = dict(parser["market"])
    _expect_keys(mk, "market", required=("theta_states", "generator",
                                         "prior", "kappa", "sigma",
                                         "alpha_tick", "f0", "horizon"))
    market = MarketConfig(
        theta_states=_take(mk, "market", "theta_states", _float_list,
                           "number list"),
        generator=_take(mk, "market", "generator", _matrix,
                        "matrix ('; '-separated rows)"),
        prior=_take(mk, "market", "prior", _float_list, "number list"),
        kappa=_take(mk, "market", "kappa", float, "number"),
        sigma=_take(mk, "market", "sigma", float, "number"),
        alpha_tick=_take(mk, "market", "alpha_tick", float, "number"),
        f0=_take(mk, "market", "f0", float, "number"),
        horizon=_take(mk, "market", "horizon", float, "number"),
    )

    run = dict(parser["run"])
    _expect_keys(run, "run", required=("mode",),
                 optional=tuple(_RUN_DEFAULTS))
    mode = _take(run, "run", "mode", _mode,
                 "mode (equilibrium | simulate | nash-gap | filter-demo)")
    cfg = ScenarioConfig(
        lam=lam, subpops=tuple(subpops), market=market, mode=mode,
        n_steps=_take_optional(run, "run", "n_steps", int, "integer",
                               _RUN_DEFAULTS["n_steps"]),
        seed=_take_optional(run, "run", "seed", int, "integer",
                            _RUN_DEFAULTS["seed"]),
        replications=_take_optional(run, "run", "replications", int,
                                    "integer", _RUN_DEFAULTS["replications"]),
        out_dir=_take_optional(run, "run", "out_dir", str, "string",
                               _RUN_DEFAULTS["out_dir"]),
        figures=_take_optional(run, "run", "figures", _bool, "boolean",
                               _RUN_DEFAULTS["figures"]),
        nash_n_values=_take_optional(run, "run", "nash_n_values", _int_list,
                                     "integer list",
                                     _RUN_DEFAULTS["nash_n_values"]),
        forced_theta=_take_optional(run, "run", "forced_theta",
                                    _forced_theta,
                                    "schedule ('time:state' pairs, "
                                    "states numbered from 1)",
                                    _RUN_DEFAULTS["forced_theta"]),
        target_shift=_take_optional(run, "run", "target_shift", float,
                                    "number",
                                    _RUN_DEFAULTS["target_shift"]),
    )

    # range checks ride on the model validators
    validate(to_game_spec(cfg))
    for when, state in cfg.forced_theta or ():
        if state >= len(market.theta_states):
            raise ConfigError(
                f"forced_theta state {state + 1} is out of range for "
                f"{len(market.theta_states)} chain states")
        if when < 0.0 or when > market.horizon:
            raise ConfigError(
                f"forced_theta time {when} lies outside the horizon")
    check_run_controls(cfg)
    return cfg


def check_run_controls(cfg: ScenarioConfig) -> None:
    """Validate the run controls; also applied after CLI flag overrides."""
    if cfg.n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    if cfg.replications < 1:
        raise ConfigError("replications must be at least 1")
    if cfg.mode == "nash-gap" and len(cfg.nash_n_values) == 0:
        raise ConfigError("nash_n_values must not be empty")
    if any(n < 1 for n in cfg.nash_n_values):
        raise ConfigError("nash_n_values entries must be positive")


def parse_config(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path}: {exc}")
    return parse_config_string(text)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _g(x: float) -> str:
    return format(float(x), ".17g")


def emit_config(cfg: ScenarioConfig) -> str:
    """Canonical text for a configuration; parse(emit(c)) == c."""
    lines = ["[population]", f"lambda = {_g(cfg.lam)}", ""]
    for i, sub in enumerate(cfg.subpops, start=1):
        lines += [f"[population.subpop.{i}]",
                  f"a = {_g(sub.a)}",
                  f"phi = {_g(sub.phi)}",
                  f"psi = {_g(sub.psi)}",
                  f"p = {_g(sub.p)}",
                  f"m0 = {_g(sub.m0)}",
                  f"s0 = {_g(sub.s0)}",
                  f"n_agents = {sub.n_agents}",
                  ""]
    mk = cfg.market
    lines += ["[market]",
              "theta_states = " + " ".join(_g(x) for x in mk.theta_states),
              "generator = " + "; ".join(" ".join(_g(x) for x in row)
                                         for row in mk.generator),
              "prior = " + " ".join(_g(x) for x in mk.prior),
              f"kappa = {_g(mk.kappa)}",
              f"sigma = {_g(mk.sigma)}",
              f"alpha_tick = {_g(mk.alpha_tick)}",
              f"f0 = {_g(mk.f0)}",
              f"horizon = {_g(mk.horizon)}",
              ""]
    lines += ["[run]",
              f"mode = {cfg.mode}",
              f"n_steps = {cfg.n_steps}",
              f"seed = {cfg.seed}",
              f"replications = {cfg.replications}",
              f"out_dir = {cfg.out_dir}",
              f"figures = {'true' if cfg.figures else 'false'}",
              "nash_n_values = " + " ".join(str(n)
                                            for n in cfg.nash_n_values)]
    if cfg.forced_theta is not None:
        lines.append("forced_theta = " + " ".join(
            f"{_g(when)}:{state + 1}" for when, state in cfg.forced_theta))
    if cfg.target_shift is not None:
        lines.append(f"target_shift = {_g(cfg.target_shift)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# conversion to engine objects
# ---------------------------------------------------------------------------

def to_population(cfg: ScenarioConfig) -> PopulationSpec:
    return PopulationSpec(subpops=tuple(
        SubPopulationSpec(a=s.a, phi=s.phi, psi=s.psi, p=s.p,
                          m0=s.m0, s0=s.s0) for s in cfg.subpops),
        lam=cfg.lam)


def to_market(cfg: ScenarioConfig) -> LatentMarketModel:
    mk = cfg.market
    return LatentMarketModel(
        theta_states=np.array(mk.theta_states, dtype=float),
        generator=np.array([list(r) for r in mk.generator], dtype=float),
        prior=np.array(mk.prior, dtype=float),
        kappa=mk.kappa, sigma=mk.sigma, alpha_tick=mk.alpha_tick,
        f0=mk.f0, horizon=mk.horizon)


def to_game_spec(cfg: ScenarioConfig) -> GameSpec:
    # the scalar config knob shifts every agent's terminal target alike
    shift = None
    if cfg.target_shift is not None:
        n_total = sum(s.n_agents for s in cfg.subpops)
        shift = np.full(n_total, float(cfg.target_shift))
    return GameSpec(population=to_population(cfg), market=to_market(cfg),
                    n_agents_per_subpop=tuple(s.n_agents
                                              for s in cfg.subpops),
                    target_shift=shift)


def to_time_grid(cfg: ScenarioConfig) -> TimeGrid:
    return TimeGrid.uniform(cfg.market.horizon, cfg.n_steps)
