"""Append-only, content-addressed repository of generation attempts.

Every generation attempt becomes a new immutable record; rejected attempts
are kept forever, so the full failure history of a run stays auditable.
Records form a DAG through ``parents`` edges that may only point backward
in append order.

Content addressing is a SHA-256 over a canonical serialization:
``json.dumps`` of ``{"attempt", "content", "node_id", "parents",
"verdict"}`` with sorted keys, no whitespace, ``ensure_ascii=False``,
encoded as UTF-8. Timestamps live outside the preimage so replayed runs
hash identically.

Log file format (stable audit surface): UTF-8 text, one JSON object per
line with fields ``id, content, parents, node_id, attempt,
verdict:{passed,feedback}|null, ts``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .errors import ArtifactNotFoundError
from .state import Verdict


def compute_artifact_id(
    content: str,
    parents: Sequence[str],
    node_id: str,
    attempt: int,
    verdict: Optional[Verdict],
) -> str:
    preimage = json.dumps(
        {
            "attempt": attempt,
            "content": content,
            "node_id": node_id,
            "parents": list(parents),
            "verdict": None if verdict is None else {"passed": verdict.passed, "feedback": verdict.feedback},
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(preimage.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ArtifactRecord:
    """One immutable node of the artifact DAG."""

    id: str
    content: str
    parents: Tuple[str, ...]
    node_id: str
    attempt: int
    verdict: Optional[Verdict]
    created_at: float

    def to_json_line(self) -> str:
        payload = {
            "id": self.id,
            "content": self.content,
            "parents": list(self.parents),
            "node_id": self.node_id,
            "attempt": self.attempt,
            "verdict": None
            if self.verdict is None
            else {"passed": self.verdict.passed, "feedback": self.verdict.feedback},
            "ts": self.created_at,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @staticmethod
    def from_json_line(line: str) -> "ArtifactRecord":
        raw = json.loads(line)
        verdict = raw.get("verdict")
        return ArtifactRecord(
            id=raw["id"],
            content=raw["content"],
            parents=tuple(raw.get("parents", ())),
            node_id=raw["node_id"],
            attempt=raw["attempt"],
            verdict=None if verdict is None else Verdict(bool(verdict["passed"]), verdict.get("feedback", "")),
            created_at=raw.get("ts", 0.0),
        )


class RepositoryLog:
    """Ordered append-only sequence of artifact records.

    Single writer; readers may share the instance freely. ``get`` resolves
    an id to its first occurrence (identical content appended twice yields
    the same hash at two positions, both retrievable through ``records``).
    """

    def __init__(self) -> None:
        self._records: List[ArtifactRecord] = []
        self._first_index: Dict[str, int] = {}

    @property
    def records(self) -> Tuple[ArtifactRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ArtifactRecord]:
        return iter(self._records)

    def append(
        self,
        content: str,
        parents: Sequence[str] = (),
        node_id: str = "",
        attempt: int = 1,
        verdict: Optional[Verdict] = None,
    ) -> ArtifactRecord:
        for pid in parents:
            if pid not in self._first_index:
                raise ArtifactNotFoundError(f"unknown parent id: {pid!r}")
        record = ArtifactRecord(
            id=compute_artifact_id(content, parents, node_id, attempt, verdict),
            content=content,
            parents=tuple(parents),
            node_id=node_id,
            attempt=attempt,
            verdict=verdict,
            created_at=time.time(),
        )
        self._records.append(record)
        self._first_index.setdefault(record.id, len(self._records) - 1)
        return record

    def get(self, artifact_id: str) -> ArtifactRecord:
        try:
            return self._records[self._first_index[artifact_id]]
        except KeyError:
            raise ArtifactNotFoundError(f"unknown artifact id: {artifact_id!r}") from None

    def ancestors(self, artifact_id: str) -> List[ArtifactRecord]:
        """Transitive parent closure, oldest first (append-order sort).

        Append order is a topological order by construction, so sorting the
        closure by sequence position resolves forks deterministically.
        """
        if artifact_id not in self._first_index:
            raise ArtifactNotFoundError(f"unknown artifact id: {artifact_id!r}")
        seen: set = set()
        frontier = list(self.get(artifact_id).parents)
        indices: set = set()
        while frontier:
            pid = frontier.pop()
            if pid in seen:
                continue
            seen.add(pid)
            idx = self._first_index.get(pid)
            if idx is None:
                raise ArtifactNotFoundError(f"unknown parent id: {pid!r}")
            indices.add(idx)
            frontier.extend(self._records[idx].parents)
        return [self._records[i] for i in sorted(indices)]

    def records_for_node(self, node_id: str) -> List[ArtifactRecord]:
        return [r for r in self._records if r.node_id == node_id]

    def verify_chain(self) -> bool:
        """True iff every stored id matches its recomputed hash and every
        parent edge points strictly backward in the sequence.

        Purely a verdict: tampered content, rewritten edges, or removed
        lines that break references all yield False.
        """
        first_index: Dict[str, int] = {}
        for idx, record in enumerate(self._records):
            expected = compute_artifact_id(
                record.content, record.parents, record.node_id, record.attempt, record.verdict
            )
            if record.id != expected:
                return False
            for pid in record.parents:
                if pid not in first_index:
                    return False
            first_index.setdefault(record.id, idx)
        return True

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self._records:
                fh.write(record.to_json_line())
                fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "RepositoryLog":
        """Rebuild a log from disk without re-validating edges.

        Loading is deliberately lenient so that ``verify_chain`` can render
        its verdict on tampered files; ``append`` remains strict.
        """
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = ArtifactRecord.from_json_line(line)
                log._records.append(record)
                log._first_index.setdefault(record.id, len(log._records) - 1)
        return log
