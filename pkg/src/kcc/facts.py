"""In-memory knowledge graph: typed triples with indexes and provenance.

Single-writer, multiple-reader contract: callers serialize insertions;
queries may run concurrently with each other but not with an in-progress
rule-engine epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple, Union

from kcc.vocab import (
    Vocabulary,
    VocabularyViolation,
    parse_timestamp,
    render_timestamp,
)


class FactStoreError(Exception):
    pass


class UnknownFact(FactStoreError):
    """Referenced fact id does not exist in the store."""


@dataclass(frozen=True)
class Asserted:
    """Provenance of a fact taken directly from an input source."""

    source: str

    def render(self) -> str:
        return f"asserted:{self.source}"


@dataclass(frozen=True)
class Derived:
    """Provenance of a fact produced by a rule (or indicator threshold)."""

    rule_id: str
    premises: Tuple[int, ...]

    def render(self) -> str:
        refs = "+".join(f"f{p}" for p in self.premises)
        return f"derived:{self.rule_id}:{refs}"


Provenance = Union[Asserted, Derived]


def parse_provenance(text: str) -> Provenance:
    if text.startswith("asserted:"):
        return Asserted(text[len("asserted:"):])
    if text.startswith("derived:"):
        rest = text[len("derived:"):]
        rule_id, _, refs = rest.rpartition(":")
        if not rule_id:
            raise FactStoreError(f"malformed provenance: {text!r}")
        premises = tuple(int(r.lstrip("f")) for r in refs.split("+") if r)
        return Derived(rule_id, premises)
    raise FactStoreError(f"malformed provenance: {text!r}")


@dataclass(frozen=True)
class Fact:
    fact_id: int
    subject: str
    predicate: str
    obj: Any
    provenance: Provenance

    @property
    def triple(self) -> Tuple[str, str, Any]:
        return (self.subject, self.predicate, self.obj)


@dataclass(frozen=True)
class Pattern:
    """Triple pattern; None in a position means wildcard."""

    subject: Optional[str] = None
    predicate: Optional[str] = None
    obj: Any = None
    obj_is_wild: bool = True

    @classmethod
    def of(cls, subject=None, predicate=None, obj="*"):
        if obj == "*":
            return cls(subject, predicate, None, True)
        return cls(subject, predicate, obj, False)


@dataclass
class Explanation:
    """Derivation tree node: leaves are Asserted facts."""

    fact: Fact
    rule_id: Optional[str]
    children: List["Explanation"] = field(default_factory=list)

    def leaves(self) -> List[Fact]:
        if not self.children:
            return [self.fact]
        out: List[Fact] = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def render(self, indent: int = 0) -> str:
        via = f"  [via {self.rule_id}]" if self.rule_id else ""
        lines = [
            "  " * indent
            + f"f{self.fact.fact_id} {render_triple(self.fact)}{via}"
        ]
        for child in self.children:
            lines.append(child.render(indent + 1))
        return "\n".join(lines)


def render_object(obj: Any) -> str:
    if isinstance(obj, datetime):
        return render_timestamp(obj)
    if isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (int, float)):
        return repr(obj)
    if isinstance(obj, str):
        if ":" in obj and " " not in obj and not obj.startswith('"'):
            return obj  # entity id
        return json.dumps(obj)
    raise FactStoreError(f"unrenderable object: {obj!r}")


def render_triple(fact: Fact) -> str:
    return f"{fact.subject} {fact.predicate} {render_object(fact.obj)}"


class FactStore:
    """Indexed triple set with set semantics on (subject, predicate, object).

    Three hash indexes: by subject, by predicate, by (subject, predicate).
    Fact ids are monotone logical timestamps assigned at insertion.
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._facts: Dict[int, Fact] = {}
        self._spo: Dict[Tuple[str, str, Any], int] = {}
        self._by_s: Dict[str, List[int]] = {}
        self._by_p: Dict[str, List[int]] = {}
        self._by_sp: Dict[Tuple[str, str], List[int]] = {}
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._facts)

    def __iter__(self):
        return iter(self.facts())

    def facts(self) -> List[Fact]:
        return [self._facts[i] for i in sorted(self._facts)]

    def get(self, fact_id: int) -> Fact:
        try:
            return self._facts[fact_id]
        except KeyError:
            raise UnknownFact(f"no fact f{fact_id}") from None

    def contains(self, subject: str, predicate: str, obj: Any) -> bool:
        return (subject, predicate, obj) in self._spo

    def id_of(self, subject: str, predicate: str, obj: Any) -> Optional[int]:
        return self._spo.get((subject, predicate, obj))

    def insert(
        self, subject: str, predicate: str, obj: Any, provenance: Provenance
    ) -> Tuple[bool, int]:
        """Insert a fact; returns (inserted_new, fact_id).

        Duplicate (s,p,o) keeps the original fact and provenance.
        Raises VocabularyViolation if the triple fails validation.
        """
        if not isinstance(subject, str) or not subject:
            raise VocabularyViolation(f"bad subject: {subject!r}")
        obj = self.vocab.coerce(predicate, obj)
        if isinstance(provenance, Derived):
            if not provenance.premises:
                raise FactStoreError("derived fact needs >=1 premise")
            for pid in provenance.premises:
                if pid not in self._facts:
                    raise UnknownFact(f"premise f{pid} not in store")
        key = (subject, predicate, obj)
        existing = self._spo.get(key)
        if existing is not None:
            return (False, existing)
        fid = self._next_id
        self._next_id += 1
        fact = Fact(fid, subject, predicate, obj, provenance)
        self._facts[fid] = fact
        self._spo[key] = fid
        self._by_s.setdefault(subject, []).append(fid)
        self._by_p.setdefault(predicate, []).append(fid)
        self._by_sp.setdefault((subject, predicate), []).append(fid)
        return (True, fid)

    def query(self, pattern: Pattern) -> List[Fact]:
        """Facts matching all constant positions, sorted by fact id."""
        s, p = pattern.subject, pattern.predicate
        if s is not None and p is not None:
            ids: Iterable[int] = self._by_sp.get((s, p), [])
        elif s is not None:
            ids = self._by_s.get(s, [])
        elif p is not None:
            ids = self._by_p.get(p, [])
        else:
            ids = sorted(self._facts)
        out = []
        for fid in ids:
            fact = self._facts[fid]
            if not pattern.obj_is_wild and not _obj_eq(fact.obj, pattern.obj):
                continue
            out.append(fact)
        out.sort(key=lambda f: f.fact_id)
        return out

    def explain(self, fact_id: int) -> Explanation:
        """Derivation tree rooted at fact_id; leaves are Asserted facts."""
        fact = self.get(fact_id)
        if isinstance(fact.provenance, Asserted):
            return Explanation(fact, None)
        node = Explanation(fact, fact.provenance.rule_id)
        for pid in fact.provenance.premises:
            node.children.append(self.explain(pid))
        return node

    # -- flat-file dump/load ------------------------------------------------

    def dump_lines(self) -> List[str]:
        lines = []
        for fact in self.facts():
            lines.append(
                f"f{fact.fact_id} {fact.subject} {fact.predicate} "
                f"{render_object(fact.obj)} {fact.provenance.render()}"
            )
        return lines

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.dump_lines():
                fh.write(line + "\n")

    @classmethod
    def load_lines(cls, lines: Iterable[str], vocab: Vocabulary) -> "FactStore":
        store = cls(vocab)
        for raw in lines:
            line = raw.rstrip("\n")
            if not line:
                continue
            head = line.split(" ", 3)
            if len(head) != 4:
                raise FactStoreError(f"malformed dump line: {line!r}")
            fid_text, subject, predicate, rest = head
            obj_text, _, prov_text = rest.rpartition(" ")
            if not obj_text:
                raise FactStoreError(f"malformed dump line: {line!r}")
            obj = _parse_object(obj_text, vocab.schema_of(predicate))
            prov = parse_provenance(prov_text)
            fid = int(fid_text.lstrip("f"))
            store._next_id = fid
            inserted, got = store.insert(subject, predicate, obj, prov)
            if not inserted or got != fid:
                raise FactStoreError(f"duplicate or misnumbered fact: {line!r}")
        store._next_id = (max(store._facts) + 1) if store._facts else 1
        return store

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "FactStore":
        with open(path, encoding="utf-8") as fh:
            return cls.load_lines(fh, vocab)


def _obj_eq(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return float(a) == float(b)
    return a == b


def _parse_object(text: str, schema: Optional[str]) -> Any:
    if text.startswith('"'):
        return json.loads(text)
    if schema == "timestamp":
        return parse_timestamp(text)
    if schema == "integer":
        return int(text)
    if schema == "decimal":
        return float(text)
    if schema in ("entity", "string") or schema is None:
        return text
    raise FactStoreError(f"cannot parse object {text!r} for schema {schema}")
