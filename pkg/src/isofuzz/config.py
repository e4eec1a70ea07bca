"""Campaign configuration files.

The format is YAML.  Actors may be written as a list of single-key
mappings whose values are lists of single-key mappings, the shape of the
original tool's configs, or as plain nested mappings::

    actors:
    - main:
      - mode: "host"
      - privilege_level: "kernel"
    - guest:
      - mode: "guest"
      - observer: true
      - data_properties:
        - writable: false
    instruction_allowlist:
    - ...
    executor:
      bugs: [foreshadow_p]
      noise_probability: 0.0
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Optional

import yaml

from .isa import Opcode, PTE_BITS

BUG_NAMES = ("meltdown_us", "foreshadow_p", "mds_assist", "dss_divider", "rsrr_priv",
             "smsw_umip_analog")
MODES = ("host", "guest")
PRIVILEGES = ("kernel", "user")
KPTI_MODES = ("none", "clear_present", "unmap")
PRIV_CLASSES = ("register", "umip")
OVERRIDE_KEYS = tuple(PTE_BITS) + tuple(f"nested_{k}" for k in PTE_BITS)

# the pool used when an allowlist is absent or contains "..."
DEFAULT_POOL = ("ADD", "SUB", "AND", "OR", "XOR", "SHL", "SHR", "CMP", "CMOV", "MUL", "DIV",
                "LOAD", "STORE", "BR", "NOP")
ALLOWED_MNEMONICS = tuple(op.name for op in Opcode)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BugToggles:
    meltdown_us: bool = False
    foreshadow_p: bool = False
    mds_assist: bool = False
    dss_divider: bool = False
    rsrr_priv: bool = False
    smsw_umip_analog: bool = False

    @property
    def mask(self) -> int:
        return sum(1 << i for i, n in enumerate(BUG_NAMES) if getattr(self, n))

    @property
    def enabled(self) -> tuple:
        return tuple(n for n in BUG_NAMES if getattr(self, n))

    @classmethod
    def of(cls, *names: str) -> "BugToggles":
        for n in names:
            if n not in BUG_NAMES:
                raise ConfigError(f"unknown bug toggle {n!r}")
        return cls(**{n: True for n in names})


@dataclass(frozen=True)
class ActorConfig:
    name: str
    mode: str = "host"
    privilege_level: str = "kernel"
    observer: bool = False
    data_properties: tuple = ()  # sorted (key, bool) pairs, keys from OVERRIDE_KEYS

    @property
    def properties(self) -> dict:
        return dict(self.data_properties)


@dataclass(frozen=True)
class ExecutorConfig:
    bugs: BugToggles = BugToggles()
    noise_probability: float = 0.0
    memory_aliasing: bool = False
    kpti: str = "none"
    privileged_read_disable: bool = False
    window: int = 16
    instruction_budget: int = 4096


@dataclass(frozen=True)
class AnalyzerConfig:
    sample_sizes: tuple = (15, 40, 160, 320)
    threshold: float = 8.0


@dataclass(frozen=True)
class GeneratorConfig:
    cross_actor_access: bool = False
    observer_div_instrumentation: bool = True
    privileged_registers: str = "register"
    address_mask: int = 0xFC0


@dataclass(frozen=True)
class CampaignConfig:
    actors: tuple = ()
    instruction_allowlist: tuple = DEFAULT_POOL
    contract_observation_clause: str = "load+store+pc"
    contract_execution_clause: tuple = ("noninterference",)
    enable_prefetchers: bool = False  # accepted, has no effect
    executor: ExecutorConfig = ExecutorConfig()
    analyzer: AnalyzerConfig = AnalyzerConfig()
    generator: GeneratorConfig = GeneratorConfig()
    seed: Optional[int] = None

    def actor(self, name: str) -> ActorConfig:
        for a in self.actors:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def actor_names(self) -> list[str]:
        return [a.name for a in self.actors]

    def with_bugs(self, *names: str) -> "CampaignConfig":
        return replace(self, executor=replace(self.executor, bugs=BugToggles.of(*names)))

    def with_executor(self, **kw) -> "CampaignConfig":
        return replace(self, executor=replace(self.executor, **kw))

    def to_text(self) -> str:
        """Serialize to config text that :func:`parse_config` reads back."""
        return dump_config(self)


# ---------------------------------------------------------------------------
# parsing helpers


def _merge_list_of_maps(value, where: str) -> dict:
    """Accept either a mapping or a list of single-key mappings."""
    if value is None:
        return {}
    if isinstance(value, dict):
        return dict(value)
    if isinstance(value, list):
        out = {}
        for item in value:
            if not isinstance(item, dict) or len(item) != 1:
                raise ConfigError(f"{where}: expected single-key entries, got {item!r}")
            (k, v), = item.items()
            if k in out:
                raise ConfigError(f"{where}: duplicate key {k!r}")
            out[k] = v
        return out
    raise ConfigError(f"{where}: expected a mapping or list, got {type(value).__name__}")


def _bool(v, where) -> bool:
    if isinstance(v, bool):
        return v
    raise ConfigError(f"{where}: expected true/false, got {v!r}")


def _choice(v, options, where) -> str:
    if v not in options:
        raise ConfigError(f"{where}: {v!r} is not one of {', '.join(options)}")
    return v


def _check_keys(d: dict, allowed, where):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}: unknown key {k!r}")


def _parse_actor(name, body) -> ActorConfig:
    where = f"actor {name!r}"
    d = _merge_list_of_maps(body, where)
    _check_keys(d, ("mode", "privilege_level", "observer", "data_properties"), where)
    mode = _choice(d.get("mode", "host"), MODES, f"{where} mode")
    priv = _choice(d.get("privilege_level", "kernel"), PRIVILEGES, f"{where} privilege_level")
    obs = _bool(d.get("observer", False), f"{where} observer")
    props = _merge_list_of_maps(d.get("data_properties"), f"{where} data_properties")
    for k, v in props.items():
        if k not in OVERRIDE_KEYS:
            raise ConfigError(f"{where} data_properties: unknown page bit {k!r}")
        _bool(v, f"{where} data_properties.{k}")
        if k.startswith("nested_") and mode != "guest":
            raise ConfigError(f"{where}: nested page bits need a guest actor")
    return ActorConfig(name, mode, priv, obs, tuple(sorted(props.items())))


def _parse_allowlist(value) -> tuple:
    if value is None:
        return DEFAULT_POOL
    if not isinstance(value, list):
        raise ConfigError("instruction_allowlist: expected a list")
    out = []
    for item in value:
        if item is Ellipsis or item == "...":
            out.extend(DEFAULT_POOL)
            continue
        if not isinstance(item, str) or item.upper() not in ALLOWED_MNEMONICS:
            raise ConfigError(f"instruction_allowlist: {item!r} is not an ISA opcode")
        out.append(item.upper())
    seen = []
    for m in out:
        if m not in seen:
            seen.append(m)
    if not seen:
        raise ConfigError("instruction_allowlist is empty")
    return tuple(seen)


def _parse_section(cls, raw, where, convert):
    d = _merge_list_of_maps(raw, where)
    names = [f.name for f in fields(cls)]
    _check_keys(d, names, where)
    kw = {}
    for k, v in d.items():
        kw[k] = convert(k, v, f"{where}.{k}")
    return cls(**kw)


def _conv_executor(k, v, where):
    if k == "bugs":
        if isinstance(v, dict):
            for n in v:
                _choice(n, BUG_NAMES, where)
            return BugToggles(**{n: _bool(b, f"{where}.{n}") for n, b in v.items()})
        if v is None:
            return BugToggles()
        if not isinstance(v, list):
            raise ConfigError(f"{where}: expected a list of bug names")
        for n in v:
            _choice(n, BUG_NAMES, where)
        return BugToggles.of(*v)
    if k == "noise_probability":
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v < 1.0:
            raise ConfigError(f"{where}: must be a number in [0, 1)")
        return float(v)
    if k == "kpti":
        return _choice(v, KPTI_MODES, where)
    if k in ("window", "instruction_budget"):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{where}: must be a positive integer")
        return v
    return _bool(v, where)


def _conv_analyzer(k, v, where):
    if k == "sample_sizes":
        if not isinstance(v, list) or not v or not all(
                isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in v):
            raise ConfigError(f"{where}: expected a list of positive integers")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ConfigError(f"{where}: schedule must increase")
        return tuple(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
        raise ConfigError(f"{where}: must be a positive number")
    return float(v)


def _conv_generator(k, v, where):
    if k == "privileged_registers":
        return _choice(v, PRIV_CLASSES, where)
    if k == "address_mask":
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 0xFF8:
            raise ConfigError(f"{where}: must be an integer in [0, 0xff8]")
        return v
    return _bool(v, where)


_TOP_KEYS = ("actors", "instruction_allowlist", "contract_observation_clause",
             "contract_execution_clause", "enable_prefetchers", "executor", "analyzer",
             "generator", "seed")


def config_from_dict(data: Any) -> CampaignConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    _check_keys(data, _TOP_KEYS, "config")
    if "actors" not in data:
        raise ConfigError("config: 'actors' is required")
    raw_actors = data["actors"]
    actor_items = []
    if isinstance(raw_actors, list):
        for item in raw_actors:
            if not isinstance(item, dict) or len(item) != 1:
                raise ConfigError(f"actors: expected single-key entries, got {item!r}")
            actor_items.append(next(iter(item.items())))
    elif isinstance(raw_actors, dict):
        actor_items = list(raw_actors.items())
    else:
        raise ConfigError("actors: expected a list or mapping")
    actors = tuple(_parse_actor(str(n), b) for n, b in actor_items)
    names = [a.name for a in actors]
    if len(set(names)) != len(names):
        raise ConfigError("actors: duplicate actor name")
    if "main" not in names:
        raise ConfigError("actors: 'main' is required")
    main = actors[names.index("main")]
    if main.mode != "host" or main.privilege_level != "kernel":
        raise ConfigError("actor 'main' must be host mode with kernel privilege")
    # main is always actor 0
    actors = (main,) + tuple(a for a in actors if a.name != "main")
    if not any(a.observer for a in actors):
        raise ConfigError("actors: at least one actor needs observer: true")
    obs_clause = data.get("contract_observation_clause", "load+store+pc")
    _choice(obs_clause, ("load+store+pc",), "contract_observation_clause")
    exec_clause = data.get("contract_execution_clause", ["noninterference"])
    if isinstance(exec_clause, str):
        exec_clause = [exec_clause]
    for c in exec_clause:
        _choice(c, ("noninterference",), "contract_execution_clause")
    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed: must be a non-negative integer")
    return CampaignConfig(
        actors=actors,
        instruction_allowlist=_parse_allowlist(data.get("instruction_allowlist")),
        contract_observation_clause=obs_clause,
        contract_execution_clause=tuple(exec_clause),
        enable_prefetchers=_bool(data.get("enable_prefetchers", False), "enable_prefetchers"),
        executor=_parse_section(ExecutorConfig, data.get("executor"), "executor",
                                _conv_executor),
        analyzer=_parse_section(AnalyzerConfig, data.get("analyzer"), "analyzer",
                                _conv_analyzer),
        generator=_parse_section(GeneratorConfig, data.get("generator"), "generator",
                                 _conv_generator),
        seed=seed,
    )


def parse_config(text: str) -> CampaignConfig:
    """Parse config text into a fully defaulted :class:`CampaignConfig`."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg: CampaignConfig) -> dict:
    actors = []
    for a in cfg.actors:
        body = [{"mode": a.mode}, {"privilege_level": a.privilege_level}]
        if a.observer:
            body.append({"observer": True})
        if a.data_properties:
            body.append({"data_properties": [{k: v} for k, v in a.data_properties]})
        actors.append({a.name: body})
    ex = asdict(cfg.executor)
    ex["bugs"] = list(cfg.executor.bugs.enabled)
    an = asdict(cfg.analyzer)
    an["sample_sizes"] = list(cfg.analyzer.sample_sizes)
    out = {
        "actors": actors,
        "instruction_allowlist": list(cfg.instruction_allowlist),
        "contract_observation_clause": cfg.contract_observation_clause,
        "contract_execution_clause": list(cfg.contract_execution_clause),
        "enable_prefetchers": cfg.enable_prefetchers,
        "executor": ex,
        "analyzer": an,
        "generator": asdict(cfg.generator),
    }
    if cfg.seed is not None:
        out["seed"] = cfg.seed
    return out


def dump_config(cfg: CampaignConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)
