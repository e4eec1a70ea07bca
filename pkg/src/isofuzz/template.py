"""Multi-actor test-case templates.

A template is an assembly listing split into actor sections::

    .section .main
    .start:
      .macro.random_instructions.24:
      .macro.set_h2g_target.vm_start:
      .macro.switch_h2g:
    .end:
    .macro.fault_handler:

    .section .guest
    .vm_start:
      .macro.measurement_start:
      ...

``.NAME:`` declares a label, ``.macro.NAME[.ARG]:`` invokes a macro, every
other non-blank line is one toy-ISA instruction.  ``#`` starts a comment.
Repeating a ``.section`` line continues that actor's section.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from . import kernels as K
from .isa import AsmError, Instruction, format_instruction, parse_instruction

# name -> (macro id, argument kinds)
MACROS = {
    "random_instructions": (K.M_RANDOM, ("int",)),
    "measurement_start": (K.M_MEAS_START, ()),
    "measurement_end": (K.M_MEAS_END, ()),
    "switch_h2g": (K.M_SWITCH_H2G, ()),
    "switch_g2h": (K.M_SWITCH_G2H, ()),
    "set_h2g_target": (K.M_SET_H2G, ("label",)),
    "set_g2h_target": (K.M_SET_G2H, ("label",)),
    "switch_k2u": (K.M_SWITCH_K2U, ()),
    "switch_u2k": (K.M_SWITCH_U2K, ()),
    "set_k2u_target": (K.M_SET_K2U, ("label",)),
    "set_u2k_target": (K.M_SET_U2K, ("label",)),
    "fault_handler": (K.M_FAULT_HANDLER, ()),
    "flush_buffers": (K.M_FLUSH_BUFFERS, ()),
    "flush_l1d": (K.M_FLUSH_L1D, ()),
    "full_cache_flush": (K.M_FULL_FLUSH, ()),
    "dummy_div": (K.M_DUMMY_DIV, ()),
}
MACRO_NAMES = {v[0]: k for k, v in MACROS.items()}
MITIGATION_MACROS = frozenset({"flush_buffers", "flush_l1d", "full_cache_flush", "dummy_div"})

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"


class TemplateError(ValueError):
    """Parse or validation failure; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class InstrItem:
    instr: Instruction
    target: Optional[str] = None  # unresolved branch label


@dataclass(frozen=True)
class MacroInvocation:
    name: str
    args: tuple = ()
    owner: str = ""
    position: int = 0  # item index within the owner's section
    line: int = field(default=0, compare=False)

    @property
    def macro_id(self) -> int:
        return MACROS[self.name][0]


Item = Union[Label, InstrItem, MacroInvocation]


@dataclass(frozen=True)
class Section:
    name: str
    items: tuple = ()

    def macros(self) -> list[MacroInvocation]:
        return [i for i in self.items if isinstance(i, MacroInvocation)]

    def labels(self) -> list[str]:
        return [i.name for i in self.items if isinstance(i, Label)]


@dataclass(frozen=True)
class Template:
    sections: tuple = ()

    @property
    def actor_names(self) -> list[str]:
        return [s.name for s in self.sections]

    def section(self, name: str) -> Section:
        for s in self.sections:
            if s.name == name:
                return s
        raise KeyError(name)

    def macros(self) -> list[MacroInvocation]:
        return [m for s in self.sections for m in s.macros()]

    def label_owner(self) -> dict[str, str]:
        return {lab: s.name for s in self.sections for lab in s.labels()}


def _parse_macro(body: str, lineno: int) -> tuple[str, tuple]:
    parts = body.split(".")
    name = parts[0]
    if name not in MACROS:
        raise TemplateError(f"unknown macro {name!r}", lineno)
    kinds = MACROS[name][1]
    raw = parts[1:]
    if len(raw) != len(kinds):
        raise TemplateError(f"macro {name} takes {len(kinds)} argument(s), got {len(raw)}",
                            lineno)
    args = []
    for kind, a in zip(kinds, raw):
        if kind == "int":
            if not re.fullmatch(r"\d+", a):
                raise TemplateError(f"macro {name} expects an integer, got {a!r}", lineno)
            args.append(int(a))
        else:
            if not re.fullmatch(_IDENT, a):
                raise TemplateError(f"macro {name} expects a label, got {a!r}", lineno)
            args.append(a)
    return name, tuple(args)


def parse_template(text: str) -> Template:
    """Parse template text; raises :class:`TemplateError` with a line number."""
    order: list[str] = []
    items: dict[str, list] = {}
    lines_of: dict[str, list] = {}
    current = None
    seen_labels: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(rf"\.section\s*\.({_IDENT})", line)
        if m:
            current = m.group(1)
            if current not in items:
                order.append(current)
                items[current] = []
                lines_of[current] = []
            continue
        if current is None:
            raise TemplateError("content before the first .section", lineno)
        m = re.fullmatch(r"\.macro\.([^\s:]+):", line)
        if m or line.startswith(".macro"):
            if not m:
                raise TemplateError(f"malformed macro line {line!r}", lineno)
            name, args = _parse_macro(m.group(1), lineno)
            items[current].append(MacroInvocation(name, args, current, len(items[current]),
                                                  lineno))
            lines_of[current].append(lineno)
            continue
        m = re.fullmatch(rf"\.?({_IDENT}):", line)
        if m:
            lab = m.group(1)
            if lab in seen_labels:
                raise TemplateError(f"duplicate label {lab!r} (first at line "
                                    f"{seen_labels[lab]})", lineno)
            seen_labels[lab] = lineno
            items[current].append(Label(lab))
            lines_of[current].append(lineno)
            continue
        if line.startswith("."):
            raise TemplateError(f"unknown directive {line!r}", lineno)
        try:
            ins, target = parse_instruction(line)
        except AsmError as exc:
            raise TemplateError(str(exc), lineno) from None
        if target is not None:
            target = target.lstrip(".")
        items[current].append(InstrItem(ins, target))
        lines_of[current].append(lineno)
    if "main" not in items:
        raise TemplateError("missing .section .main")
    # every reference must resolve
    owner = {}
    for name in order:
        for it in items[name]:
            if isinstance(it, Label):
                owner[it.name] = name
    for name in order:
        for it, ln in zip(items[name], lines_of[name]):
            if isinstance(it, MacroInvocation):
                for kind, a in zip(MACROS[it.name][1], it.args):
                    if kind == "label" and a not in owner:
                        raise TemplateError(f"undefined label {a!r}", ln)
            elif isinstance(it, InstrItem) and it.target is not None:
                if it.target not in owner:
                    raise TemplateError(f"undefined label {it.target!r}", ln)
                if owner[it.target] != name:
                    raise TemplateError(f"branch to {it.target!r} leaves section {name!r}", ln)
    return Template(tuple(Section(n, tuple(items[n])) for n in order))


def format_template(t: Template) -> str:
    """Canonical text; ``parse_template(format_template(t)) == t``."""
    out = []
    for sec in t.sections:
        if out:
            out.append("")
        out.append(f".section .{sec.name}")
        for it in sec.items:
            if isinstance(it, Label):
                out.append(f".{it.name}:")
            elif isinstance(it, MacroInvocation):
                suffix = "".join(f".{a}" for a in it.args)
                out.append(f"  .macro.{it.name}{suffix}:")
            else:
                tgt = f".{it.target}" if it.target is not None else None
                out.append(f"  {format_instruction(it.instr, tgt)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# validation against a config

_TRANSITIONS = {
    # macro -> (required mode, required privilege) of the section using it
    "switch_h2g": ("host", "kernel"),
    "set_h2g_target": ("host", "kernel"),
    "set_g2h_target": ("host", "kernel"),
    "switch_g2h": ("guest", None),
    "switch_k2u": ("host", "kernel"),
    "set_k2u_target": ("host", "kernel"),
    "set_u2k_target": ("host", "kernel"),
    "switch_u2k": ("host", "user"),
}
# macro -> (mode, privilege) the label argument must live in
_TARGET_KIND = {
    "set_h2g_target": ("guest", None),
    "set_g2h_target": ("host", "kernel"),
    "set_k2u_target": ("host", "user"),
    "set_u2k_target": ("host", "kernel"),
}


@dataclass(frozen=True)
class Diagnostic:
    message: str
    section: Optional[str] = None
    line: Optional[int] = None

    def __str__(self) -> str:
        where = []
        if self.section:
            where.append(f"section {self.section}")
        if self.line:
            where.append(f"line {self.line}")
        return f"{', '.join(where)}: {self.message}" if where else self.message


def validate(template: Template, config) -> list[Diagnostic]:
    """All inconsistencies between ``template`` and ``config``; empty when
    the pair is usable."""
    diags = []
    actors = {a.name: a for a in config.actors}
    for name in template.actor_names:
        if name not in actors:
            diags.append(Diagnostic(f"section {name!r} has no actor in the config", name))
    for name in actors:
        if name not in template.actor_names:
            diags.append(Diagnostic(f"actor {name!r} has no section in the template"))
    owner = template.label_owner()

    def kind_ok(actor, want):
        mode, priv = want
        return actor.mode == mode and (priv is None or actor.privilege_level == priv)

    starts, ends = [], []
    for m in template.macros():
        actor = actors.get(m.owner)
        if actor is None:
            continue
        if m.name in _TRANSITIONS and not kind_ok(actor, _TRANSITIONS[m.name]):
            mode, priv = _TRANSITIONS[m.name]
            need = f"{mode}-{priv}" if priv else mode
            diags.append(Diagnostic(f"{m.name} is only valid in {need} code", m.owner, m.line))
        if m.name in _TARGET_KIND:
            tgt_actor = actors.get(owner.get(m.args[0], ""))
            if tgt_actor is not None and not kind_ok(tgt_actor, _TARGET_KIND[m.name]):
                diags.append(Diagnostic(f"{m.name} target {m.args[0]!r} is in an actor of the "
                                        "wrong mode or privilege", m.owner, m.line))
        if m.name == "measurement_start":
            starts.append(m)
        elif m.name == "measurement_end":
            ends.append(m)
    observers = [a.name for a in config.actors if a.observer]
    for what, found in (("measurement_start", starts), ("measurement_end", ends)):
        if len(found) != 1:
            diags.append(Diagnostic(f"{what} must appear exactly once, found {len(found)}"))
        for m in found:
            if m.owner not in observers:
                diags.append(Diagnostic(f"{what} must be owned by an observer", m.owner, m.line))
    handlers = [m for m in template.macros() if m.name == "fault_handler"]
    if len(handlers) > 1:
        diags.append(Diagnostic("at most one fault_handler allowed", handlers[1].owner,
                                handlers[1].line))
    return diags


__all__ = [
    "Diagnostic", "InstrItem", "Label", "MACROS", "MacroInvocation", "Section", "Template",
    "TemplateError", "format_template", "parse_template", "validate",
]
