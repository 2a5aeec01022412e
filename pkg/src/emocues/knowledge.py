"""Offline commonsense relation store restricted to IsA, HasContext and Causes.

The TSV format is one triple per line, ``head<TAB>relation<TAB>tail``.  A
subset of ConceptNet can be exported to it offline, e.g. by filtering the
English ``/r/IsA``, ``/r/HasContext`` and ``/r/Causes`` edges of the assertion
dump and keeping single-word concepts.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from emocues.errors import ParseError, ValidationError

log = logging.getLogger(__name__)


class RelationKind(enum.Enum):
    IS_A = "IsA"
    HAS_CONTEXT = "HasContext"
    CAUSES = "Causes"

    @property
    def code(self) -> str:
        return _CODES[self]

    @classmethod
    def from_name(cls, name: str) -> "RelationKind | None":
        try:
            return cls(name)
        except ValueError:
            return None


_CODES = {RelationKind.IS_A: "I", RelationKind.HAS_CONTEXT: "H", RelationKind.CAUSES: "C"}
RELATION_ORDER = (RelationKind.IS_A, RelationKind.HAS_CONTEXT, RelationKind.CAUSES)

Triple = tuple[str, RelationKind, str]


@dataclass(frozen=True)
class KnowledgeBase:
    triples: frozenset[Triple] = frozenset()
    skipped: int = 0
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], skipped: int = 0) -> "KnowledgeBase":
        clean = set()
        for head, rel, tail in triples:
            for w in (head, tail):
                if not w or w != w.lower() or any(ch.isspace() for ch in w):
                    raise ValidationError(f"knowledge-base word {w!r} is not a lowercase single token")
            clean.add((head, RelationKind(rel), tail))
        index: dict[frozenset, set] = {}
        for head, rel, tail in clean:
            index.setdefault(frozenset((head, tail)), set()).add(rel)
        frozen = {k: frozenset(v) for k, v in index.items()}
        return cls(frozenset(clean), skipped, frozen)

    def query(self, a: str, b: str) -> frozenset[RelationKind]:
        return self._index.get(frozenset((a, b)), frozenset())

    def with_triple(self, triple: Triple) -> "KnowledgeBase":
        return KnowledgeBase.from_triples(self.triples | {triple}, self.skipped)

    @property
    def vocabulary(self) -> set[str]:
        return {w for h, _, t in self.triples for w in (h, t)}

    def stats(self) -> dict:
        per_rel = {r.value: 0 for r in RELATION_ORDER}
        for _, rel, _ in self.triples:
            per_rel[rel.value] += 1
        return {"triples": len(self.triples), "vocabulary": len(self.vocabulary),
                "pairs": len(self._index), "skipped": self.skipped, "relations": per_rel}


def query_relations(kb: KnowledgeBase, a: str, b: str) -> frozenset[RelationKind]:
    """Relation kinds holding between ``a`` and ``b`` in either direction."""
    return kb.query(a, b)


def sample_kb_path():
    """Path of the small curated TSV bundled with the package."""
    return resources.files("emocues.data").joinpath("sample_kb.tsv")


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    triples = []
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
            head, rel_name, tail = (f.strip() for f in fields)
            rel = RelationKind.from_name(rel_name)
            if rel is None:
                skipped += 1
                continue
            triples.append((head.lower(), rel, tail.lower()))
    if skipped:
        log.warning("%s: skipped %d triple(s) with unsupported relations", path, skipped)
    try:
        return KnowledgeBase.from_triples(triples, skipped)
    except ValidationError as exc:
        raise ParseError(str(exc), path) from None
