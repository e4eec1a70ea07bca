"""The fuzzing loop: generate, model, group, measure, analyse, report."""
from __future__ import annotations

import base64
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .analyzer import (LadderStats, SamplingPlan, ViolationReport,
                       check_isolation, group_inputs)
from .config import CampaignConfig, ConfigError, parse_config
from .executor import RunawayExecution, measure_sample, setup_environment
from .generator import generate_inputs, generate_program, observer_actors
from .machine import SetupError
from .model import ContractModel, ModelBudgetExceeded
from .package import TestCasePackage, load_package, package_from
from .template import Template, TemplateError, parse_template, validate

log = logging.getLogger(__name__)

REPORT_FORMAT = 1
PROGRESS_EVERY = 100


class CampaignError(ValueError):
    """Fatal problem with the campaign inputs (bad template or config)."""


@dataclass(frozen=True)
class CampaignSpec:
    template: Union[str, Path]
    config: Union[str, Path]
    n_programs: int = 100
    n_input_classes: int = 10
    n_variants: int = 5
    seed: int = 0
    stop_on_first: bool = False
    out_dir: Optional[Union[str, Path]] = None
    schedule: Optional[tuple] = None  # overrides the config's analyzer schedule

    def __post_init__(self):
        if self.n_programs < 1:
            raise CampaignError("n_programs must be at least 1")
        if self.n_input_classes * self.n_variants < 2:
            raise CampaignError("need at least two inputs per program")


@dataclass
class ProgramOutcome:
    index: int
    measurements: int
    n_classes: int
    n_checkable: int
    reports: list
    discarded: Optional[str] = None
    pairs: int = 0


@dataclass
class CampaignResult:
    programs: int = 0
    measurements: int = 0
    violations: list = field(default_factory=list)  # (program index, ViolationReport)
    discarded: int = 0
    pairs_checked: int = 0
    wall_time: float = 0.0
    stopped_early: bool = False
    report_paths: list = field(default_factory=list)

    @property
    def measurements_per_second(self) -> float:
        return self.measurements / self.wall_time if self.wall_time > 0 else 0.0

    def summary(self) -> dict:
        """Deterministic summary; timing is deliberately left out."""
        return {
            "programs": self.programs,
            "measurements": self.measurements,
            "violations": [{"program": p, **r.to_dict()} for p, r in self.violations],
            "discarded": self.discarded,
            "pairs_checked": self.pairs_checked,
            "stopped_early": self.stopped_early,
        }


def _read(src) -> str:
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src
                                  and Path(src).is_file()):
        return Path(src).read_text(encoding="utf-8")
    return str(src)


def program_seeds(master: int, index: int) -> tuple:
    """Independent seeds for (program, inputs, noise) of program ``index``."""
    ss = np.random.SeedSequence([master, index])
    prog, inp, noise = ss.spawn(3)
    return (prog, inp, int(noise.generate_state(1, dtype=np.uint64)[0]))


class Campaign:
    """One template/config pair; programs are processed independently."""

    def __init__(self, template: Template, config: CampaignConfig, template_text: str = "",
                 config_text: str = ""):
        diags = validate(template, config)
        if diags:
            raise CampaignError("; ".join(str(d) for d in diags))
        self.template = template
        self.config = config
        self.template_text = template_text
        self.config_text = config_text or config.to_text()
        self.observers = observer_actors(config)

    @classmethod
    def load(cls, template_src, config_src) -> "Campaign":
        ttext, ctext = _read(template_src), _read(config_src)
        try:
            template = parse_template(ttext)
        except TemplateError as exc:
            raise CampaignError(f"template: {exc}") from None
        try:
            config = parse_config(ctext)
        except ConfigError as exc:
            raise CampaignError(f"config: {exc}") from None
        return cls(template, config, ttext, ctext)

    def build(self, master: int, index: int, n_classes: int, n_variants: int):
        ps, isd, noise = program_seeds(master, index)
        prog = generate_program(self.template, self.config, ps)
        inputs = generate_inputs(self.config, n_classes, n_variants, isd)
        return prog, package_from(prog, self.config, inputs), noise

    def analyse(self, pkg: TestCasePackage, noise_seed: int, plan: SamplingPlan,
                stats: LadderStats) -> tuple:
        """Model, group and measure one package; returns (classes, reports)."""
        model = ContractModel(pkg, self.config)
        cts = [model.run(i) for i in pkg.inputs]
        ohashes = [i.digest(self.observers) for i in pkg.inputs]
        classes = group_inputs(cts, ohashes)
        checkable = [c for c in classes if c.checkable]
        ctx = setup_environment(pkg, self.config, noise_seed)

        runaway = []

        def measure(i, n):
            try:
                return measure_sample(ctx, pkg.inputs[i], n, i)
            except RunawayExecution as exc:
                runaway.append(exc)
                raise

        reports = check_isolation(checkable, measure, plan, self.config.analyzer.threshold,
                                  stats)
        if runaway:
            raise runaway[0]
        return classes, checkable, cts, reports

    def run_program(self, master: int, index: int, n_classes: int, n_variants: int,
                    plan: SamplingPlan) -> tuple:
        prog, pkg, noise = self.build(master, index, n_classes, n_variants)
        stats = LadderStats()
        try:
            classes, checkable, cts, reports = self.analyse(pkg, noise, plan, stats)
        except (RunawayExecution, ModelBudgetExceeded, SetupError) as exc:
            return ProgramOutcome(index, stats.measurements, 0, 0, [], str(exc)), None
        out = ProgramOutcome(index, stats.measurements, len(classes), len(checkable), reports,
                             pairs=stats.pairs_checked)
        return out, (prog, pkg, noise, checkable, cts)

    def write_report(self, out_dir: Path, master: int, index: int, report: ViolationReport,
                     k: int, built) -> Path:
        prog, pkg, noise, checkable, cts = built
        cls = checkable[report.class_index]
        doc = {
            "format": REPORT_FORMAT,
            "tool_version": __version__,
            "master_seed": master,
            "program_index": index,
            "noise_seed": noise,
            "class_members": list(cls.members),
            "contract_trace": cts[report.input_a].serialize(),
            "violation": report.to_dict(),
            "template": self.template_text,
            "config": self.config_text,
            "program": prog.dump(),
            "package": base64.b64encode(pkg.to_bytes()).decode("ascii"),
        }
        path = out_dir / f"violation-{index:06d}-{k}.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path


def run_campaign(spec: CampaignSpec, campaign: Optional[Campaign] = None) -> CampaignResult:
    """Run the campaign; deterministic in everything but wall-clock time."""
    camp = campaign or Campaign.load(spec.template, spec.config)
    plan = SamplingPlan(spec.schedule or camp.config.analyzer.sample_sizes)
    out_dir = Path(spec.out_dir) if spec.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    res = CampaignResult()
    t0 = time.perf_counter()
    for idx in range(spec.n_programs):
        outcome, built = camp.run_program(spec.seed, idx, spec.n_input_classes, spec.n_variants,
                                          plan)
        res.programs += 1
        res.measurements += outcome.measurements
        if outcome.discarded is not None:
            res.discarded += 1
            log.info("program %d discarded: %s", idx, outcome.discarded)
        else:
            res.pairs_checked += outcome.pairs
        for k, rep in enumerate(outcome.reports):
            res.violations.append((idx, rep))
            if out_dir is not None:
                res.report_paths.append(camp.write_report(out_dir, spec.seed, idx, rep, k,
                                                          built))
        if (idx + 1) % PROGRESS_EVERY == 0:
            log.info("progress: %d programs, %d measurements, %d violations", idx + 1,
                     res.measurements, len(res.violations))
        if outcome.reports and spec.stop_on_first:
            res.stopped_early = idx + 1 < spec.n_programs
            break
    res.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        (out_dir / "summary.json").write_text(
            json.dumps(res.summary(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return res


# ---------------------------------------------------------------------------
# reproduction


class ReportError(ValueError):
    pass


@dataclass
class Reproduction:
    persists: bool
    reports: list
    message: str


def load_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportError(f"cannot read report {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != REPORT_FORMAT:
        raise ReportError(f"unsupported report format in {path}")
    for key in ("package", "config", "noise_seed", "violation", "class_members"):
        if key not in doc:
            raise ReportError(f"report {path} lacks {key!r}")
    return doc


def reproduce(path, config_override=None) -> Reproduction:
    """Re-run the model, the ladder and the analysis for a stored violation."""
    doc = load_report(path)
    try:
        pkg = load_package(base64.b64decode(doc["package"], validate=True))
    except (ValueError, TypeError) as exc:
        raise ReportError(f"bad package in report: {exc}") from None
    if config_override is not None:
        config = config_override if isinstance(config_override, CampaignConfig) else \
            parse_config(_read(config_override))
    else:
        config = parse_config(doc["config"])
    if len(config.actors) != pkg.n_actors:
        raise ReportError("config does not match the package's actors")
    members = doc["class_members"]
    sub = pkg.with_inputs([pkg.inputs[i] for i in members])
    model = ContractModel(sub, config)
    cts = [model.run(i) for i in sub.inputs]
    ohashes = [i.digest(observer_actors(config)) for i in sub.inputs]
    classes = [c for c in group_inputs(cts, ohashes) if c.checkable]
    ctx = setup_environment(sub, config, int(doc["noise_seed"]))
    plan = SamplingPlan(config.analyzer.sample_sizes)
    reps = check_isolation(classes, lambda i, n: measure_sample(ctx, sub.inputs[i], n, i), plan,
                           config.analyzer.threshold)
    a, b = doc["violation"]["inputs"]
    want = {members.index(a), members.index(b)}
    if any({r.input_a, r.input_b} == want for r in reps):
        return Reproduction(True, reps, "violation persists")
    return Reproduction(False, reps, "violation not reproduced")


