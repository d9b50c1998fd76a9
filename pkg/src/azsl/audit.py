"""Disclosure accounting: every channel message lands here exactly once.

Entries carry a wall-clock timestamp for forensics, but the digest covers only
the deterministic fields so that seed-identical runs produce identical digests
(and therefore byte-identical reports).
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

UP = "up"
DOWN = "down"

KIND_FEEDBACK_REQUEST = "feedback_request"
KIND_FEEDBACK_RESPONSE = "feedback_response"  # softmax/regularizer only: low risk
KIND_CE_GRAD = "ce_grad"  # white-box gradient feedback: mid risk
KIND_WEIGHT_REQUEST = "weight_request"
KIND_WEIGHT_BLOB = "weight_blob"
KIND_WEIGHT_REFUSAL = "weight_refusal"
KIND_ERROR = "error"


@dataclass(frozen=True)
class RiskEntry:
    timestamp: float
    kind: str
    size: int
    risk: str
    scenario: str
    direction: str
    payload_sha: str = ""


class RiskLog:
    """Append-only transcript of channel messages with risk tags."""

    def __init__(self):
        self._entries: list[RiskEntry] = []
        self._lock = threading.Lock()

    def append(
        self,
        kind: str,
        size: int,
        risk: str,
        scenario: str,
        direction: str,
        payload: bytes | None = None,
    ) -> None:
        sha = hashlib.sha256(payload).hexdigest()[:16] if payload is not None else ""
        entry = RiskEntry(
            timestamp=time.time(),
            kind=kind,
            size=int(size),
            risk=risk,
            scenario=scenario,
            direction=direction,
            payload_sha=sha,
        )
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[RiskEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def digest(self) -> str:
        """Hash of the deterministic message sequence (timestamps excluded)."""
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.direction}|{e.kind}|{e.size}|{e.risk}|{e.scenario}|{e.payload_sha}\n".encode())
        return h.hexdigest()

    def to_json(self) -> str:
        body = {
            "digest": self.digest(),
            "entries": [asdict(e) for e in self.entries],
        }
        return json.dumps(body, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def load_transcript(path: str | Path) -> list[RiskEntry]:
    try:
        body = json.loads(Path(path).read_text())
        return [RiskEntry(**e) for e in body["entries"]]
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ValueError(f"corrupt transcript {path}: {exc}") from exc


def summarize(entries: list[RiskEntry]) -> dict:
    """Counts/bytes/risk histogram plus the audit verdict line."""
    up = [e for e in entries if e.direction == UP]
    down = [e for e in entries if e.direction == DOWN]
    risk_hist: dict[str, int] = {}
    kind_hist: dict[str, int] = {}
    for e in entries:
        risk_hist[e.risk] = risk_hist.get(e.risk, 0) + 1
        kind_hist[e.kind] = kind_hist.get(e.kind, 0) + 1
    n_mid = risk_hist.get("mid", 0)
    n_blobs = kind_hist.get(KIND_WEIGHT_BLOB, 0)
    if n_mid == 0 and n_blobs == 0:
        verdict = "BLACKBOX-CLEAN"
    else:
        verdict = f"WHITEBOX ({n_mid} mid-risk messages)"
    return {
        "messages": len(entries),
        "up_messages": len(up),
        "down_messages": len(down),
        "up_bytes": sum(e.size for e in up),
        "down_bytes": sum(e.size for e in down),
        "risk": risk_hist,
        "kinds": kind_hist,
        "verdict": verdict,
    }
