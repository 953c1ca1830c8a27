import json
import re
from datetime import datetime, timezone

import pytest

from kcc.facts import FactStore
from kcc.ingest import (
    IntelStatement,
    MalformedConfig,
    MalformedDocument,
    MalformedEvent,
    MalformedLine,
    SidMap,
    TechniqueTable,
    commit_event,
    event_to_facts,
    extract_intel_from_text,
    intel_to_facts,
    make_event_id,
    parse_host_event,
    parse_intel_document,
    parse_snort_line,
    render_snort_line,
)
from kcc.vocab import EventKind

from conftest import FIXTURES

SNORT_LINE = (
    "08/15-14:31:07.123456  [**] [1:1000001:1] PSNG_TCP_PORTSCAN [**] "
    "[Classification: Attempted Information Leak] [Priority: 2] {TCP} "
    "192.168.56.101:44321 -> 192.168.56.102:445"
)

# independent field-extraction oracle: one flat regex over the whole line
_ORACLE_RE = re.compile(
    r"^(\d\d)/(\d\d)-(\d\d):(\d\d):(\d\d)\.(\d{6})\s+\[\*\*\]\s+"
    r"\[(\d+):(\d+):(\d+)\] (.*) \[\*\*\] \[Classification: (.*)\] "
    r"\[Priority: (\d+)\] \{(\w+)\} "
    r"([\d.]+)(?::(\d+))? -> ([\d.]+)(?::(\d+))?$"
)


def oracle_fields(line):
    m = _ORACLE_RE.match(line)
    assert m, line
    g = m.groups()
    return {
        "ts": tuple(int(x) for x in g[0:6]),
        "sig": (int(g[6]), int(g[7]), int(g[8])),
        "msg": g[9],
        "classification": g[10],
        "priority": int(g[11]),
        "proto": g[12],
        "src": (g[13], int(g[14]) if g[14] else None),
        "dst": (g[15], int(g[16]) if g[16] else None),
    }


def event_fields(event):
    ts = event.ts
    return {
        "ts": (ts.month, ts.day, ts.hour, ts.minute, ts.second, ts.microsecond),
        "sig": event.signature,
        "msg": event.message,
        "classification": event.classification,
        "priority": event.priority,
        "proto": event.proto,
        "src": (event.src_ip, event.src_port),
        "dst": (event.dst_ip, event.dst_port),
    }


class TestSnortParser:
    def test_portscan_line(self, sidmap):
        event = parse_snort_line(SNORT_LINE, sidmap)
        assert event.kind is EventKind.PORT_SCAN
        assert event.src_ip == "192.168.56.101"
        assert event.dst_ip == "192.168.56.102"
        assert event.dst_port == 445
        assert event.signature == (1, 1000001, 1)
        assert event.ts == datetime(
            2017, 8, 15, 14, 31, 7, 123456, tzinfo=timezone.utc
        )

    def test_fields_match_oracle_on_all_fixture_lines(self, sidmap):
        lines = (FIXTURES / "snort_fast.log").read_text().splitlines()
        assert len(lines) >= 10
        for line in lines:
            assert event_fields(parse_snort_line(line, sidmap)) == oracle_fields(line)

    def test_render_round_trips_fixture_lines(self, sidmap):
        for line in (FIXTURES / "snort_fast.log").read_text().splitlines():
            event = parse_snort_line(line, sidmap)
            assert render_snort_line(event) == line

    def test_garbage_line(self, sidmap):
        with pytest.raises(MalformedLine) as err:
            parse_snort_line("garbage", sidmap)
        assert err.value.column == 1

    def test_error_column_points_at_divergence(self, sidmap):
        broken = SNORT_LINE.replace("[Priority: 2]", "[Urgency: 2]")
        with pytest.raises(MalformedLine) as err:
            parse_snort_line(broken, sidmap)
        # column of the first stage that fails to match (the priority tag)
        assert err.value.column == SNORT_LINE.index(" [Priority") + 1

    def test_unmapped_sid_is_unclassified_with_fields(self, sidmap):
        line = SNORT_LINE.replace("[1:1000001:1]", "[1:9999999:1]")
        event = parse_snort_line(line, sidmap)
        assert event.kind is EventKind.UNCLASSIFIED
        assert event.src_ip == "192.168.56.101"
        assert event.dst_port == 445


class TestHostEvents:
    def test_proc_stat(self):
        event = parse_host_event(
            '{"agent":"process","ts":"2017-08-15T14:33:02Z","host":"host:victim",'
            '"type":"proc.stat","attrs":{"processName":"encryptor.exe","cpuPercent":93.5}}'
        )
        assert event.kind is EventKind.PROCESS_STAT
        assert event.attributes["cpuPercent"] == 93.5
        assert event.host == "host:victim"

    def test_missing_host_rejected(self):
        with pytest.raises(MalformedEvent, match="host"):
            parse_host_event(
                '{"agent":"process","ts":"2017-08-15T14:33:02Z","type":"proc.stat"}'
            )

    def test_unknown_agent_rejected(self):
        with pytest.raises(MalformedEvent, match="agent"):
            parse_host_event(
                '{"agent":"registry","ts":"2017-08-15T14:33:02Z",'
                '"host":"host:victim","type":"proc.stat"}'
            )

    def test_file_modified_with_boolean_attr(self):
        event = parse_host_event(
            '{"agent":"file","ts":"2017-08-15T14:34:00Z","host":"host:victim",'
            '"type":"file.modified","attrs":{"filePath":"C:\\\\Users\\\\a\\\\t.doc",'
            '"sensitive":true}}'
        )
        assert event.kind is EventKind.FILE_MODIFIED
        assert event.attributes["sensitive"] == 1

    def test_timezone_normalized_to_utc(self):
        event = parse_host_event(
            '{"agent":"file","ts":"2017-08-15T10:00:00-04:00","host":"host:v",'
            '"type":"file.modified"}'
        )
        assert event.ts == datetime(2017, 8, 15, 14, 0, tzinfo=timezone.utc)

    def test_unknown_type_maps_to_unclassified(self):
        event = parse_host_event(
            '{"agent":"file","ts":"2017-08-15T14:00:00Z","host":"host:v",'
            '"type":"file.archived"}'
        )
        assert event.kind is EventKind.UNCLASSIFIED

    def test_fixture_lines_emit_only_registered_predicates(self, default_vocab):
        store = FactStore(default_vocab)
        for i, line in enumerate(
            (FIXTURES / "host_events.jsonl").read_text().splitlines()
        ):
            event = parse_host_event(line)
            event.event_id = make_event_id("host", line, i)
            commit_event(store, event)  # raises on unregistered predicates
        assert len(store) > 0


class TestIntel:
    def test_sentence_is_a_ransomware(self, techniques):
        statements = extract_intel_from_text("Wannacry is a ransomware", techniques)
        assert statements == [
            IntelStatement("wannacry", "IsMalwareOfClass", "ransomware")
        ]

    def test_sentence_uses_technique(self, techniques):
        statements = extract_intel_from_text(
            "Wannacry uses Malformed SMB packets to exploit", techniques
        )
        assert statements == [
            IntelStatement(
                "wannacry", "UsesTechnique", "technique:malformed_smb_exploit"
            )
        ]

    def test_new_class_variant_and_synonyms(self, techniques):
        assert extract_intel_from_text("Petya is a new ransomware.", techniques)
        assert extract_intel_from_text("NotPetya uses Eternal Blue", techniques) == [
            IntelStatement(
                "notpetya", "UsesTechnique", "technique:malformed_smb_exploit"
            )
        ]

    def test_non_matching_sentence(self, techniques):
        assert extract_intel_from_text("The weather is nice", techniques) == []

    def test_benign_corpus_yields_zero_statements(self, techniques):
        sentences = (FIXTURES / "benign_sentences.txt").read_text().splitlines()
        assert len(sentences) == 20
        extracted = [
            s for line in sentences for s in extract_intel_from_text(line, techniques)
        ]
        assert extracted == []

    def test_document(self, techniques):
        statements = parse_intel_document(
            (FIXTURES / "intel_wannacry.json").read_text(), techniques
        )
        assert len(statements) == 2
        assert {s.assertion for s in statements} == {
            "IsMalwareOfClass",
            "UsesTechnique",
        }

    def test_empty_document(self, techniques):
        assert parse_intel_document("[]", techniques) == []

    def test_unknown_technique_named_in_error(self, techniques):
        doc = json.dumps({"name": "x", "uses": ["technique:nope"]})
        with pytest.raises(MalformedDocument, match="technique:nope"):
            parse_intel_document(doc, techniques)


class TestEventToFacts:
    def test_snort_event_mapping(self, sidmap):
        event = parse_snort_line(SNORT_LINE, sidmap)
        event.event_id = "event:e1"
        facts = event_to_facts(event)
        assert len(facts) == 5
        assert ("event:e1", "snortKind", "portscan") in facts
        assert ("host:192.168.56.102", "observedEvent", "event:e1") in facts
        assert ("event:e1", "srcIp", "host:192.168.56.101") in facts

    def test_host_event_without_attributes(self):
        event = parse_host_event(
            '{"agent":"process","ts":"2017-08-15T14:00:00Z","host":"host:v",'
            '"type":"proc.stat"}'
        )
        event.event_id = "event:e2"
        facts = event_to_facts(event)
        assert [(s, p) for s, p, _ in facts] == [
            ("event:e2", "hostKind"),
            ("event:e2", "onHost"),
            ("event:e2", "eventTs"),
            ("host:v", "observedEvent"),
        ]

    def test_intel_statements_to_facts(self, techniques):
        statements = parse_intel_document(
            (FIXTURES / "intel_wannacry.json").read_text(), techniques
        )
        facts = [f for s in statements for f in intel_to_facts(s)]
        assert ("malware:wannacry", "isClass", "class:ransomware") in facts
        assert (
            "malware:wannacry",
            "usesTechnique",
            "technique:malformed_smb_exploit",
        ) in facts

    def test_every_kind_has_a_registered_mapping(self, default_vocab, sidmap):
        store = FactStore(default_vocab)
        for i, kind in enumerate(EventKind):
            event = parse_host_event(
                json.dumps(
                    {
                        "agent": "file",
                        "ts": "2017-08-15T14:00:00Z",
                        "host": "host:v",
                        "type": "ignored",
                    }
                )
            )
            event.kind = kind
            event.event_id = f"event:k{i}"
            commit_event(store, event)

    def test_event_id_content_derived(self):
        a = make_event_id("snort", SNORT_LINE, 0)
        b = make_event_id("snort", SNORT_LINE, 0)
        c = make_event_id("snort", SNORT_LINE, 1)
        assert a == b != c
        assert a.startswith("event:")


class TestConfigTables:
    def test_sidmap_rejects_bad_line(self):
        with pytest.raises(MalformedConfig):
            SidMap.parse("1 PortScan\n")
        with pytest.raises(MalformedConfig):
            SidMap.parse("1:2 NotAKind\n")

    def test_technique_table_lookup_normalizes(self, techniques):
        assert (
            techniques.lookup("  Malformed   SMB  Packets ")
            == "technique:malformed_smb_exploit"
        )
        assert techniques.lookup("unknown thing") is None
