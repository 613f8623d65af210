"""Flat ``key = value`` experiment configs with one section per component.

Example::

    [experiment]
    kind = toy_dqn
    p_grid = 0:1:21          # start:stop:count, or a comma separated list
    m_values = 1, 5, 20
    n_agents = 10
    episodes = 2000

    [toy]
    r1 = 0.5

Every key is optional (defaults as in :class:`SweepConfig`), but unknown
sections, unknown keys, malformed values and out-of-range values are errors
that name the offending key.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
from importlib import resources
from pathlib import Path

import numpy as np

from .actor_critic import AcHyperparams
from .dqn import DqnHyperparams
from .environments import DomainError, PortfolioConfig, RewardMode, ToyConfig
from .experiments import ExperimentKind, SweepConfig
from .nn import InvalidConfigurationError

PROFILES = ("paper", "desk")
_PROFILE_FILES = {
    (ExperimentKind.TOY_DQN, "paper"): "toy_paper.cfg",
    (ExperimentKind.TOY_DQN, "desk"): "toy_desk.cfg",
    (ExperimentKind.PORTFOLIO_AC, "paper"): "portfolio_paper.cfg",
    (ExperimentKind.PORTFOLIO_AC, "desk"): "portfolio_desk.cfg",
    (ExperimentKind.PORTFOLIO_FULL_POLICY, "paper"): "full_policy_paper.cfg",
    (ExperimentKind.PORTFOLIO_FULL_POLICY, "desk"): "full_policy_desk.cfg",
}


class ConfigError(InvalidConfigurationError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    return int(float(text)) if "e" in text.lower() and float(text).is_integer() else int(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else _int(text)


def _int_list(text: str) -> tuple:
    return tuple(_int(t) for t in text.replace(",", " ").split())


def _grid(text: str) -> tuple:
    if ":" in text:
        start, stop, count = text.split(":")
        return tuple(np.round(np.linspace(float(start), float(stop), _int(count)), 12))
    return tuple(float(t) for t in text.replace(",", " ").split())


# section -> key -> (parser, target field)
_SCHEMA = {
    "experiment": {
        "kind": (ExperimentKind, "kind"),
        "p_grid": (_grid, "p_grid"),
        "m_values": (_int_list, "m_values"),
        "n_agents": (_int, "n_agents"),
        "episodes": (_int, "episodes"),
        "base_seed": (_int, "base_seed"),
        "workers": (_int, "workers"),
    },
    "toy": {
        "r1": (float, "r1"),
        "r2": (float, "r2"),
        "r_safe": (float, "r_safe"),
        "p": (float, "p"),
        "M": (_int, "M"),
        "initial_wealth": (float, "initial_wealth"),
        "reward_mode": (RewardMode, "reward_mode"),
    },
    "portfolio": {
        "r_win": (float, "r_win"),
        "r_loss": (float, "r_loss"),
        "p": (float, "p"),
        "M": (_int, "M"),
        "initial_wealth": (float, "initial_wealth"),
    },
    "dqn": {
        "hidden": (_int, "hidden"),
        "gamma": (float, "gamma"),
        "learning_rate": (float, "learning_rate"),
        "batch_size": (_int, "batch_size"),
        "buffer_capacity": (_optional_int, "buffer_capacity"),
        "feature": (str, "feature"),
        "log_wealth_from_M": (_optional_int, "log_wealth_from_M"),
        "n_eval": (_int, "n_eval"),
        "epsilon_initial": (float, "initial"),
        "epsilon_decay": (float, "decay_rate"),
        "epsilon_floor": (float, "floor"),
    },
    "ac": {
        "hidden_actor": (_int, "hidden_actor"),
        "hidden_critic": (_int, "hidden_critic"),
        "lr_actor": (float, "lr_actor"),
        "lr_critic": (float, "lr_critic"),
        "normalize_returns": (_bool, "normalize_returns"),
        "critic_loss": (str, "critic_loss"),
    },
    "diagnose": {
        "T": (_int, "T"),
        "n": (_int, "n"),
    },
}


@dataclasses.dataclass(frozen=True)
class DiagnoseSettings:
    T: int = 1000
    n: int = 1000

    def __post_init__(self):
        if self.T < 1 or self.n < 1:
            raise InvalidConfigurationError("T and n must be >= 1")


@dataclasses.dataclass(frozen=True)
class LoadedConfig:
    sweep: SweepConfig
    diagnose: DiagnoseSettings
    source: str


def _parse_values(cp: configparser.ConfigParser, origin: str) -> dict:
    out = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        schema = _SCHEMA[section]
        vals = {}
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"{origin}: unknown key '{section}.{key}'")
            parser, target = schema[key]
            try:
                vals[target] = parser(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{origin}: malformed value for '{section}.{key}': {raw!r} ({exc})") from None
        out[section] = vals
    return out


def _build(section: str, cls, values: dict, base=None):
    try:
        return dataclasses.replace(base, **values) if base is not None else cls(**values)
    except (InvalidConfigurationError, DomainError, ValueError) as exc:
        keys = ", ".join(f"{section}.{k}" for k in values) or section
        raise ConfigError(f"out-of-range value in [{section}] ({keys}): {exc}") from None


def parse_config_text(text: str, origin: str = "<config>", base: LoadedConfig | None = None) -> LoadedConfig:
    """Parse config text, layering it over ``base`` when given."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keys are case sensitive (M vs m)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    v = _parse_values(cp, origin)

    sweep0 = base.sweep if base else None
    toy = _build("toy", ToyConfig, v.get("toy", {}), sweep0.toy if sweep0 else ToyConfig())
    portfolio = _build("portfolio", PortfolioConfig, v.get("portfolio", {}), sweep0.portfolio if sweep0 else PortfolioConfig())
    dqn_vals = dict(v.get("dqn", {}))
    eps_keys = {k: dqn_vals.pop(k) for k in ("initial", "decay_rate", "floor") if k in dqn_vals}
    dqn_base = sweep0.dqn_hp if sweep0 else DqnHyperparams()
    eps = dqn_base.epsilon
    if eps_keys:
        eps = dataclasses.replace(eps, **eps_keys)
        if not (0 <= eps.floor <= 1 and 0 <= eps.initial <= 1 and 0 < eps.decay_rate <= 1):
            raise ConfigError("out-of-range value in [dqn] (epsilon_*): values must lie in [0, 1]")
    dqn_hp = _build("dqn", DqnHyperparams, {**dqn_vals, "epsilon": eps}, dqn_base)
    ac_hp = _build("ac", AcHyperparams, v.get("ac", {}), sweep0.ac_hp if sweep0 else AcHyperparams())

    exp = v.get("experiment", {})
    if sweep0 is None and "kind" not in exp:
        raise ConfigError(f"{origin}: missing required key 'experiment.kind'")
    fields = dict(toy=toy, portfolio=portfolio, dqn_hp=dqn_hp, ac_hp=ac_hp, **exp)
    sweep = _build("experiment", SweepConfig, fields, sweep0)
    diag = _build("diagnose", DiagnoseSettings, v.get("diagnose", {}), base.diagnose if base else DiagnoseSettings())
    return LoadedConfig(sweep, diag, origin)


def parse_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def bundled_config_text(name: str) -> str:
    return resources.files("ergodic_rl").joinpath("configs").joinpath(name).read_text()


def profile_config(kind, profile: str) -> LoadedConfig:
    kind = ExperimentKind(kind)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    name = _PROFILE_FILES[(kind, profile)]
    return parse_config_text(bundled_config_text(name), name)


def load(kind, profile: str = "desk", path=None) -> LoadedConfig:
    """Bundled profile for ``kind``, optionally overridden by a user file.

    A user file may set ``experiment.kind`` itself; it must then agree with
    the command being run.
    """
    base = profile_config(kind, profile)
    if path is None:
        return base
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    cfg = parse_config_text(text, str(p), base)
    if cfg.sweep.kind is not ExperimentKind(kind):
        raise ConfigError(f"{p}: experiment.kind = {cfg.sweep.kind.value} does not match this command ({ExperimentKind(kind).value})")
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def dump_config(cfg: LoadedConfig) -> str:
    """Effective settings in the config format; parsing it back gives the same config."""
    s = cfg.sweep
    objects = {
        "experiment": s,
        "toy": s.toy,
        "portfolio": s.portfolio,
        "dqn": s.dqn_hp,
        "ac": s.ac_hp,
        "diagnose": cfg.diagnose,
    }
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, target) in keys.items():
            if section in ("toy", "portfolio") and key in ("p", "M"):
                continue  # set per cell by the sweep
            obj = objects[section]
            if section == "dqn" and key.startswith("epsilon_"):
                obj = s.dqn_hp.epsilon
            lines.append(f"{key} = {_fmt_value(getattr(obj, target))}")
        lines.append("")
    return "\n".join(lines)
