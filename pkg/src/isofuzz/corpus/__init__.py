"""Shipped templates and the scenario matrix built from them.

Each scenario pairs a template with a campaign config.  The configs switch
on the leak the scenario is meant to expose, so fuzzing a scenario as is
exercises a vulnerable machine; ``config.with_bugs()`` gives the clean one.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from ..config import ActorConfig, BugToggles, CampaignConfig, GeneratorConfig
from ..config import DEFAULT_POOL

TEMPLATES = ("h2v", "v2v", "k2u", "u2u")

ACTORS = {
    "h2v": (("main", "host", "kernel", False), ("guest", "guest", "kernel", True)),
    "v2v": (("main", "host", "kernel", False), ("vm1", "guest", "kernel", False),
            ("vm2", "guest", "kernel", True)),
    "k2u": (("main", "host", "kernel", False), ("user", "host", "user", True)),
    "u2u": (("main", "host", "kernel", False), ("user1", "host", "user", False),
            ("user2", "host", "user", True)),
}

# Page-property rows: (name, override on the observer's faulty page, leak it exposes).
MEM_ROWS = (
    ("a-bit", {"accessed": False}, "mds_assist"),
    ("d-bit", {"dirty": False}, "mds_assist"),
    ("p-bit", {"present": False}, "foreshadow_p"),
    ("r-bit", {"reserved": True}, "mds_assist"),
    ("w-bit", {"writable": False}, "mds_assist"),
    ("u-bit", {}, "meltdown_us"),
    ("npt-a-bit", {"nested_accessed": False}, "mds_assist"),
    ("npt-d-bit", {"nested_dirty": False}, "mds_assist"),
    ("npt-p-bit", {"nested_present": False}, "mds_assist"),
    ("npt-r-bit", {"nested_reserved": True}, "mds_assist"),
    ("npt-w-bit", {"nested_writable": False}, "mds_assist"),
)

MITIGATION_MARK = "# @mitigation"
FAULT_MITIGATION_MARK = "# @fault-mitigation"


@dataclass(frozen=True)
class Scenario:
    name: str
    template_name: str
    template: str  # template text
    config: CampaignConfig
    expect_leak: bool = True  # whether the scenario's leak survives its mitigations

    @property
    def config_text(self) -> str:
        return self.config.to_text()


def template_text(name: str) -> str:
    if name not in TEMPLATES:
        raise KeyError(f"unknown template {name!r}")
    return resources.files(__package__).joinpath("templates", f"{name}.asm").read_text("utf-8")


def observer_name(template: str) -> str:
    return next(a[0] for a in ACTORS[template] if a[3])


def _guest_observer(template: str) -> bool:
    return next(a[1] for a in ACTORS[template] if a[3]) == "guest"


def base_config(template: str, props=None, **generator) -> CampaignConfig:
    """Actors of ``template`` with ``props`` applied to the observer's pages."""
    actors = []
    for name, mode, priv, obs in ACTORS[template]:
        dp = tuple(sorted((props or {}).items())) if obs else ()
        actors.append(ActorConfig(name, mode, priv, obs, dp))
    return CampaignConfig(actors=tuple(actors), generator=GeneratorConfig(**generator))


# Rows whose override only trips on stores.  Store assists and faults forward
# nothing, so under mds_assist these rows run but cannot leak.
WRITE_ONLY_ROWS = ("d-bit", "w-bit", "npt-d-bit", "npt-w-bit")


def mem_rows(template: str) -> list:
    """Rows meaningful for ``template``: nested bits need a guest observer and
    the U bit needs a user observer."""
    guest = _guest_observer(template)
    out = []
    for row in MEM_ROWS:
        if row[0].startswith("npt-") and not guest:
            continue
        if row[0] == "u-bit" and guest:
            continue
        out.append(row)
    return out


def mem_config(template: str, row: str) -> CampaignConfig:
    name, props, bug = next(r for r in MEM_ROWS if r[0] == row)
    cfg = base_config(template, props, cross_actor_access=(row == "u-bit"))
    return cfg.with_executor(memory_aliasing=True, bugs=BugToggles.of(bug))


def comp_config(template: str) -> CampaignConfig:
    cfg = base_config(template, observer_div_instrumentation=False)
    return cfg.with_bugs("dss_divider")


def reg_config(template: str, kind: str) -> CampaignConfig:
    """``kind`` is ``register`` or ``umip``."""
    cfg = base_config(template, privileged_registers=kind)
    cfg = replace(cfg, instruction_allowlist=DEFAULT_POOL + ("RDPRIV",))
    return cfg.with_bugs("rsrr_priv" if kind == "register" else "smsw_umip_analog")


def patched(text: str, before_transition: str = "", in_handler: str = "") -> str:
    """Fill the mitigation markers of a shipped template."""
    def fill(src, mark, macros):
        body = "".join(f"  .macro.{m}:\n" for m in macros.split() if m)
        return src.replace(f"  {mark}\n", body)
    text = fill(text, MITIGATION_MARK, before_transition)
    return fill(text, FAULT_MITIGATION_MARK, in_handler)


def _plain(name: str) -> str:
    return patched(template_text(name))


def scenario_corpus() -> list[Scenario]:
    out = []
    for t in TEMPLATES:
        for row, _, _ in mem_rows(t):
            out.append(Scenario(f"{t}-mem-{row}", t, _plain(t), mem_config(t, row),
                                row not in WRITE_ONLY_ROWS))
    for t in ("k2u", "u2u"):
        out.append(Scenario(f"{t}-comp-dss", t, _plain(t), comp_config(t)))
        out.append(Scenario(f"{t}-reg-register", t, _plain(t), reg_config(t, "register")))
        out.append(Scenario(f"{t}-reg-umip", t, _plain(t), reg_config(t, "umip")))

    def mit(t, base, label, before="", handler="", leak=True, cfg=None):
        c = cfg if cfg is not None else mem_config(t, base)
        out.append(Scenario(f"{t}-{base}+{label}", t, patched(template_text(t), before, handler),
                            c, leak))

    for t in ("v2v", "k2u"):
        mit(t, "a-bit", "flush_buffers", "flush_buffers", leak=False)
        mit(t, "a-bit", "full_cache_flush", "full_cache_flush")
    mit("h2v", "p-bit", "flush_l1d", "flush_l1d", leak=False)
    mit("h2v", "p-bit", "full_cache_flush", "full_cache_flush", leak=False)
    mit("k2u", "comp-dss", "dummy_div", "dummy_div", leak=False, cfg=comp_config("k2u"))
    mit("k2u", "comp-dss", "dummy_div-in-handler", handler="dummy_div",
        cfg=comp_config("k2u"))
    for kpti, before, leak in (("clear_present", "", True), ("unmap", "flush_buffers", False)):
        cfg = mem_config("k2u", "u-bit").with_executor(
            kpti=kpti, bugs=BugToggles.of("meltdown_us", "mds_assist"))
        label = f"kpti-{kpti}" + (f"+{before}" if before else "")
        mit("k2u", "u-bit", label, before, leak=leak, cfg=cfg)
    return out


def scenario(name: str) -> Scenario:
    for s in scenario_corpus():
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}")


def emit(directory) -> list[Path]:
    """Write every template and scenario config under ``directory``."""
    d = Path(directory)
    (d / "templates").mkdir(parents=True, exist_ok=True)
    (d / "scenarios").mkdir(parents=True, exist_ok=True)
    written = []
    for t in TEMPLATES:
        p = d / "templates" / f"{t}.asm"
        p.write_text(_plain(t), encoding="utf-8")
        written.append(p)
    for s in scenario_corpus():
        for suffix, body in ((".asm", s.template), (".yaml", s.config_text)):
            p = d / "scenarios" / f"{s.name}{suffix}"
            p.write_text(body, encoding="utf-8")
            written.append(p)
    return written


__all__ = ["MEM_ROWS", "Scenario", "TEMPLATES", "WRITE_ONLY_ROWS", "base_config",
           "comp_config", "emit", "mem_config", "mem_rows", "observer_name", "patched", "reg_config",
           "scenario", "scenario_corpus", "template_text"]
