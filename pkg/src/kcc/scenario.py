"""Deterministic scenario replay: timestamped sensor/intel inputs -> alerts.

Scenario file format, one input per line:
    <ISO-ts> <snort|host|intel-doc|intel-text> <payload>
where the payload is the raw input line (snort/host/intel-text) or a path to
an intel document, resolved relative to the scenario file.  Events replay in
timestamp order (ties broken by file order); after each same-timestamp batch
the indicators are re-extracted and the rule engine re-run to fixpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from kcc.correlator import (
    Alert,
    IndicatorConfig,
    assemble_alerts,
    extract_indicators,
)
from kcc.facts import FactStore
from kcc.ingest import (
    IngestError,
    SidMap,
    TechniqueTable,
    commit_event,
    commit_intel,
    extract_intel_from_text,
    make_event_id,
    parse_host_event,
    parse_intel_document,
    parse_snort_line,
)
from kcc.rules import RuleSet, run_to_fixpoint
from kcc.vocab import Vocabulary, parse_timestamp, render_timestamp

SOURCE_TAGS = ("snort", "host", "intel-doc", "intel-text")


class MalformedScenario(Exception):
    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        if lineno:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ScenarioLine:
    ts: datetime
    tag: str
    payload: str
    lineno: int


@dataclass
class Scenario:
    name: str
    lines: List[ScenarioLine]
    base_dir: Path

    @property
    def intel_lines(self) -> List[ScenarioLine]:
        return [l for l in self.lines if l.tag.startswith("intel")]

    def without_intel(self) -> "Scenario":
        """Ablated copy with all intel inputs withheld."""
        kept = [l for l in self.lines if not l.tag.startswith("intel")]
        return Scenario(f"{self.name}-no-intel", kept, self.base_dir)

    def batches(self) -> List[Tuple[datetime, List[ScenarioLine]]]:
        out: List[Tuple[datetime, List[ScenarioLine]]] = []
        for line in self.lines:
            if out and out[-1][0] == line.ts:
                out[-1][1].append(line)
            else:
                out.append((line.ts, [line]))
        return out


@dataclass
class EngineConfig:
    vocab: Vocabulary
    rules: RuleSet
    sidmap: SidMap
    techniques: TechniqueTable
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)


def load_scenario(path) -> Scenario:
    """Parse, validate, and time-sort a scenario file."""
    path = Path(path)
    lines: List[ScenarioLine] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split(None, 2)
            if len(parts) != 3:
                raise MalformedScenario(f"expected '<ts> <tag> <payload>'", lineno)
            ts_text, tag, payload = parts
            if tag not in SOURCE_TAGS:
                raise MalformedScenario(f"unknown source tag {tag!r}", lineno)
            try:
                ts = parse_timestamp(ts_text)
            except ValueError as exc:
                raise MalformedScenario(f"bad timestamp: {exc}", lineno) from exc
            lines.append(ScenarioLine(ts, tag, payload, lineno))
    lines.sort(key=lambda l: (l.ts, l.lineno))
    return Scenario(path.stem, lines, path.parent)


def validate_scenario(scenario: Scenario, config: EngineConfig) -> None:
    """Every line must be parseable by its tagged adapter."""
    for line in scenario.lines:
        try:
            _parse_payload(line, scenario.base_dir, config)
        except IngestError as exc:
            raise MalformedScenario(str(exc), line.lineno) from exc


def _parse_payload(line: ScenarioLine, base_dir: Path, config: EngineConfig):
    if line.tag == "snort":
        return parse_snort_line(line.payload, config.sidmap, year=line.ts.year)
    if line.tag == "host":
        return parse_host_event(line.payload)
    if line.tag == "intel-text":
        return extract_intel_from_text(line.payload, config.techniques)
    doc_path = base_dir / line.payload
    if not doc_path.is_file():
        raise IngestError(f"intel document not found: {doc_path}")
    return parse_intel_document(
        doc_path.read_text(encoding="utf-8"), config.techniques
    )


@dataclass
class Transcript:
    scenario: str
    batches: List[Dict[str, Any]]
    alerts: List[Alert]
    alert_timeline: List[Dict[str, str]]
    store: FactStore

    def to_json(self) -> str:
        doc = {
            "scenario": self.scenario,
            "batches": self.batches,
            "alert_timeline": self.alert_timeline,
            "final_alerts": [a.to_json_dict() for a in self.alerts],
            "final_fact_count": len(self.store),
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def replay(scenario: Scenario, config: EngineConfig) -> Transcript:
    """Replay a scenario on a logical clock; fully deterministic.

    After each same-timestamp batch: commit facts, re-extract indicators,
    run rules to fixpoint, and re-assemble alerts.
    """
    store = FactStore(config.vocab)
    batches: List[Dict[str, Any]] = []
    first_seen: Dict[Tuple[str, str], str] = {}
    occurrences: Dict[Tuple[str, str], int] = {}
    alerts: List[Alert] = []

    for ts, lines in scenario.batches():
        asserted = 0
        for line in lines:
            try:
                parsed = _parse_payload(line, scenario.base_dir, config)
            except IngestError as exc:
                raise MalformedScenario(str(exc), line.lineno) from exc
            if line.tag in ("snort", "host"):
                key = (line.tag, line.payload)
                n = occurrences.get(key, 0)
                occurrences[key] = n + 1
                parsed.event_id = make_event_id(line.tag, line.payload, n)
                asserted += len(commit_event(store, parsed))
            else:
                asserted += len(commit_intel(store, parsed))
        indicator_facts = extract_indicators(store, config.indicators)
        result = run_to_fixpoint(config.rules, store)
        alerts = assemble_alerts(store)
        ts_text = render_timestamp(ts)
        for alert in alerts:
            first_seen.setdefault(alert.key, ts_text)
        batches.append(
            {
                "ts": ts_text,
                "inputs": len(lines),
                "facts_asserted": asserted,
                "indicator_facts": len(indicator_facts),
                "epochs": result.epochs,
                "facts_derived": result.derived,
                "alerts": [a.to_json_dict() for a in alerts],
            }
        )

    timeline = [
        {"host": host, "tier": tier, "first_ts": ts_text}
        for (host, tier), ts_text in sorted(first_seen.items())
    ]
    return Transcript(scenario.name, batches, alerts, timeline, store)
