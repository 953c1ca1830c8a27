"""Statistical indicator extraction and tiered alert assembly.

Indicators are threshold/frequency observations asserted as facts before
rule evaluation; alerts interpret the rule engine's phase-evidence and
attack facts after it has reached fixpoint.  All functions here are pure
over a quiesced store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Set, Tuple

from kcc.facts import Asserted, Derived, Explanation, Fact, FactStore, Pattern
from kcc.vocab import EventKind, IndicatorKind, KillChainPhase, render_timestamp


@dataclass
class IndicatorConfig:
    """Thresholds for indicator derivation.

    Defaults are engineering choices, not measured values.
    """

    mass_file_mod_threshold: int = 5
    mass_file_mod_window: float = 300.0  # seconds
    high_cpu_threshold: float = 80.0  # percent
    high_cpu_min_samples: int = 2
    spike_window: float = 60.0  # seconds
    spike_factor: float = 5.0  # multiplier over trailing mean
    spike_min_count: int = 10

    def validate(self) -> None:
        positive = (
            self.mass_file_mod_threshold,
            self.mass_file_mod_window,
            self.high_cpu_threshold,
            self.high_cpu_min_samples,
            self.spike_window,
            self.spike_min_count,
        )
        if any(v <= 0 for v in positive):
            raise ValueError("all thresholds must be strictly positive")
        if self.spike_factor <= 1:
            raise ValueError("spike_factor must be > 1")

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str]) -> "IndicatorConfig":
        config = cls()
        for key, raw in mapping.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown indicator setting {key!r}")
            current = getattr(config, key)
            setattr(config, key, type(current)(raw))
        config.validate()
        return config


def _event_records(
    store: FactStore, kind_predicate: str, kind: EventKind
) -> List[Tuple[str, datetime, int, str]]:
    """(host, ts, kind_fact_id, event_id) for every event of the given kind."""
    out = []
    for fact in store.query(Pattern.of(None, kind_predicate, kind.token)):
        event = fact.subject
        ts_facts = store.query(Pattern.of(event, "eventTs"))
        if not ts_facts:
            continue
        host_pred = "onHost" if kind_predicate == "hostKind" else "dstIp"
        host_facts = store.query(Pattern.of(event, host_pred))
        if not host_facts:
            continue
        out.append((host_facts[0].obj, ts_facts[0].obj, fact.fact_id, event))
    out.sort(key=lambda r: (r[0], r[1], r[3]))
    return out


def _attr(store: FactStore, event: str, predicate: str) -> Optional[Any]:
    facts = store.query(Pattern.of(event, predicate))
    return facts[0].obj if facts else None


def _group_by_host(records) -> Dict[str, list]:
    groups: Dict[str, list] = {}
    for rec in records:
        groups.setdefault(rec[0], []).append(rec)
    return groups


def sliding_window_hit(
    timestamps: List[datetime], window: float, threshold: int
) -> Optional[Tuple[int, int]]:
    """First window [t_i, t_i + window] holding >= threshold events.

    Input must be sorted.  Returns (start_index, end_index_exclusive) of the
    earliest qualifying window, or None.
    """
    j = 0
    for i in range(len(timestamps)):
        if j < i:
            j = i
        while (
            j < len(timestamps)
            and (timestamps[j] - timestamps[i]).total_seconds() <= window
        ):
            j += 1
        if j - i >= threshold:
            return (i, j)
    return None


def tumbling_window_counts(
    timestamps: List[datetime], window: float
) -> List[List[int]]:
    """Indices of sorted timestamps bucketed into consecutive windows of
    `window` seconds starting at the first timestamp."""
    if not timestamps:
        return []
    buckets: List[List[int]] = []
    t0 = timestamps[0]
    for i, ts in enumerate(timestamps):
        k = int((ts - t0).total_seconds() // window)
        while len(buckets) <= k:
            buckets.append([])
        buckets[k].append(i)
    return buckets


def extract_indicators(
    store: FactStore, config: Optional[IndicatorConfig] = None
) -> List[Fact]:
    """Assert per-host indicator facts derived by threshold/frequency analysis.

    Idempotent: set semantics on (host, hasIndicator, indicator) means a
    second run adds nothing.  Returns newly asserted facts.
    """
    config = config or IndicatorConfig()
    config.validate()
    new_facts: List[Fact] = []

    def assert_indicator(host: str, kind: IndicatorKind, premises: List[int]):
        inserted, fid = store.insert(
            host,
            "hasIndicator",
            kind.entity_id,
            Derived(f"indicator:{kind.value}", tuple(sorted(set(premises)))),
        )
        if inserted:
            new_facts.append(store.get(fid))

    # mass modification of sensitive files in a sliding window
    mods = [
        rec
        for rec in _event_records(store, "hostKind", EventKind.FILE_MODIFIED)
        if _attr(store, rec[3], "sensitive") == 1
    ]
    for host, recs in _group_by_host(mods).items():
        hit = sliding_window_hit(
            [r[1] for r in recs],
            config.mass_file_mod_window,
            config.mass_file_mod_threshold,
        )
        if hit:
            assert_indicator(
                host,
                IndicatorKind.MASS_FILE_MODIFICATION,
                [r[2] for r in recs[hit[0] : hit[1]]],
            )

    # repeated process samples above the CPU threshold
    stats = _event_records(store, "hostKind", EventKind.PROCESS_STAT)
    for host, recs in _group_by_host(stats).items():
        hot = [
            r
            for r in recs
            if isinstance(_attr(store, r[3], "cpuPercent"), (int, float))
            and _attr(store, r[3], "cpuPercent") > config.high_cpu_threshold
        ]
        if len(hot) >= config.high_cpu_min_samples:
            assert_indicator(
                host, IndicatorKind.HIGH_CPU_USAGE, [r[2] for r in hot]
            )

    # any download flagged by the network sensor
    downloads = _event_records(
        store, "snortKind", EventKind.SUSPICIOUS_DOWNLOAD
    )
    for host, recs in _group_by_host(downloads).items():
        assert_indicator(
            host,
            IndicatorKind.DOWNLOAD_FROM_UNKNOWN_SOURCE,
            [r[2] for r in recs],
        )

    # inbound-blocked count spiking over the trailing per-window mean
    blocked = _event_records(
        store, "snortKind", EventKind.INBOUND_CONNECTION_BLOCKED
    )
    for host, recs in _group_by_host(blocked).items():
        buckets = tumbling_window_counts([r[1] for r in recs], config.spike_window)
        for k in range(1, len(buckets)):
            trailing = sum(len(b) for b in buckets[:k]) / k
            count = len(buckets[k])
            if count >= config.spike_min_count and count >= config.spike_factor * trailing:
                assert_indicator(
                    host,
                    IndicatorKind.INBOUND_ACCESS_SPIKE,
                    [recs[i][2] for i in buckets[k]],
                )
                break
    return new_facts


# -- alerts --------------------------------------------------------------------


@dataclass
class Alert:
    host: str
    tier: str  # "Suspicion" | "Confirmed"
    malware: Optional[str]
    phases: List[KillChainPhase]
    evidence_fact_ids: List[int]
    first_seen: Optional[datetime]
    last_seen: Optional[datetime]

    @property
    def key(self) -> Tuple[str, str]:
        return (self.host, self.tier)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "host": self.host,
            "tier": self.tier,
            "malware": self.malware,
            "phases": [p.value for p in self.phases],
            "first_seen": render_timestamp(self.first_seen) if self.first_seen else None,
            "last_seen": render_timestamp(self.last_seen) if self.last_seen else None,
            "evidence_fact_ids": self.evidence_fact_ids,
        }


def _evidence_timespan(
    store: FactStore, roots: List[int]
) -> Tuple[Optional[datetime], Optional[datetime]]:
    stamps: List[datetime] = []
    for root in roots:
        for leaf in store.explain(root).leaves():
            ts = _attr(store, leaf.subject, "eventTs")
            if isinstance(ts, datetime):
                stamps.append(ts)
    if not stamps:
        return (None, None)
    return (min(stamps), max(stamps))


def has_intel_leaf(store: FactStore, fact_id: int) -> bool:
    return any(
        isinstance(leaf.provenance, Asserted) and leaf.provenance.source == "intel"
        for leaf in store.explain(fact_id).leaves()
    )


def assemble_alerts(store: FactStore) -> List[Alert]:
    """Tiered per-host alerts from a store at rule-engine fixpoint.

    Confirmed: an attackDetected(host, malware) fact exists.  Suspicion:
    evidence in >=2 distinct kill-chain phases without attackDetected.
    Hosts with <=1 evidenced phase raise no alert.
    """
    phases_by_host: Dict[str, Dict[KillChainPhase, int]] = {}
    for fact in store.query(Pattern.of(None, "hasPhaseEvidence")):
        try:
            phase = KillChainPhase.parse(fact.obj)
        except ValueError:
            continue
        phases_by_host.setdefault(fact.subject, {}).setdefault(phase, fact.fact_id)

    detections: Dict[str, List[Fact]] = {}
    for fact in store.query(Pattern.of(None, "attackDetected")):
        detections.setdefault(fact.subject, []).append(fact)

    alerts: List[Alert] = []
    for host in sorted(set(phases_by_host) | set(detections)):
        phase_ids = phases_by_host.get(host, {})
        phases = sorted(phase_ids, key=lambda p: p.order)
        if host in detections:
            attack_facts = detections[host]
            malware = sorted(f.obj for f in attack_facts)[0]
            roots = sorted(
                {f.fact_id for f in attack_facts} | set(phase_ids.values())
            )
            first, last = _evidence_timespan(store, roots)
            alerts.append(
                Alert(host, "Confirmed", malware, phases, roots, first, last)
            )
        elif len(phases) >= 2:
            roots = sorted(phase_ids.values())
            first, last = _evidence_timespan(store, roots)
            alerts.append(Alert(host, "Suspicion", None, phases, roots, first, last))
    return alerts


def render_alerts_jsonl(alerts: List[Alert]) -> str:
    return "\n".join(
        json.dumps(a.to_json_dict(), sort_keys=True) for a in alerts
    )


def render_report(alerts: List[Alert]) -> str:
    """Human-readable table, one block per host."""
    if not alerts:
        return "No alerts.\n"
    lines = []
    for alert in alerts:
        lines.append(f"host: {alert.host}")
        lines.append(f"  tier:      {alert.tier}")
        lines.append(f"  malware:   {alert.malware or '-'}")
        lines.append(
            "  phases:    " + ", ".join(p.value for p in alert.phases)
        )
        span = "-"
        if alert.first_seen and alert.last_seen:
            span = (
                f"{render_timestamp(alert.first_seen)} .. "
                f"{render_timestamp(alert.last_seen)}"
            )
        lines.append(f"  seen:      {span}")
        lines.append(
            "  evidence:  "
            + ", ".join(f"f{i}" for i in alert.evidence_fact_ids)
        )
    return "\n".join(lines) + "\n"
