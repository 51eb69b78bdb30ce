"""Hash-chained, optionally MAC-signed, append-only evidence ledger.

One JSON record per line. Each record hashes its own canonical serialization
(sorted keys, tight separators, ASCII) together with the previous record's
hash, so any byte-level tamper anywhere breaks the chain at that record.
With a signing key, every record additionally carries an HMAC-SHA-256 over
its hash, binding the chain to the key holder.

The ledger is the single source of truth: trajectories, tickets, and the
whole decision history are reconstructable from it alone, and a decide call
that cannot append here must fail closed rather than proceed unlogged.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal
from enum import Enum
from typing import Callable, Iterable, Mapping

from .model import format_instant, quantize

GENESIS_HASH = "0" * 64

RECORD_KINDS = ("decision", "outcome", "escalation_resolution", "policy_load")


class LedgerError(Exception):
    pass


def jsonable(value):
    """Ledger-safe JSON: decimals as fixed-point strings, no floats ever."""
    if isinstance(value, bool) or isinstance(value, int) or isinstance(value, str) or value is None:
        return value
    if isinstance(value, Decimal):
        return str(quantize(value))
    if isinstance(value, float):
        raise LedgerError("floats are not ledgerable; use Decimal")
    if isinstance(value, datetime):
        return format_instant(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = list(value)
        if isinstance(value, (set, frozenset)):
            items = sorted(items, key=repr)
        return [jsonable(v) for v in items]
    raise LedgerError(f"not ledgerable: {type(value).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def record_hash(record_without_hash: Mapping) -> str:
    return hashlib.sha256(canonical_json(record_without_hash).encode("utf-8")).hexdigest()


def record_signature(key: bytes, digest_hex: str) -> str:
    return hmac.new(key, digest_hex.encode("ascii"), hashlib.sha256).hexdigest()


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    total: int
    first_broken_seq: int | None = None
    gaps: tuple[int, ...] = ()
    signature_failures: tuple[int, ...] = ()
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "total": self.total,
            "first_broken_seq": self.first_broken_seq,
            "gaps": list(self.gaps),
            "signature_failures": list(self.signature_failures),
            "detail": self.detail,
        }


def verify_records(lines: Iterable[bytes | str], signing_key: bytes | None = None) -> VerificationReport:
    """Walk a ledger's raw lines and check every link.

    Link checks use the recorded hash of the previous record, so a single
    corrupted record is flagged once instead of cascading down the chain.
    """
    first_broken: int | None = None
    gaps: list[int] = []
    sig_failures: list[int] = []
    details: list[str] = []
    prev_recorded_hash = GENESIS_HASH
    expected_seq = 0
    total = 0

    def note_break(seq: int, message: str) -> None:
        nonlocal first_broken
        if first_broken is None:
            first_broken = seq
        details.append(f"seq {seq}: {message}")

    for raw in lines:
        seq_here = expected_seq
        total += 1
        try:
            text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
            record = json.loads(text)
            if not isinstance(record, dict):
                raise ValueError("record is not an object")
        except (UnicodeDecodeError, ValueError) as exc:
            note_break(seq_here, f"unreadable record: {exc}")
            expected_seq += 1
            continue
        seq = record.get("seq")
        if seq != expected_seq:
            gaps.append(expected_seq)
            details.append(f"seq gap: expected {expected_seq}, found {seq!r}")
        if record.get("prev_hash") != prev_recorded_hash:
            note_break(seq_here, "prev_hash does not match previous record")
        body = {k: v for k, v in record.items() if k not in ("hash", "sig")}
        recorded = record.get("hash")
        if record_hash(body) != recorded:
            note_break(seq_here, "content hash mismatch")
        if signing_key is not None:
            sig = record.get("sig")
            if not isinstance(recorded, str) or not isinstance(sig, str) or not hmac.compare_digest(
                record_signature(signing_key, recorded), sig
            ):
                sig_failures.append(seq_here)
        prev_recorded_hash = recorded if isinstance(recorded, str) else ""
        expected_seq += 1

    ok = first_broken is None and not gaps and not sig_failures
    return VerificationReport(
        ok=ok,
        total=total,
        first_broken_seq=first_broken,
        gaps=tuple(gaps),
        signature_failures=tuple(sig_failures),
        detail="; ".join(details),
    )


def verify_file(path: str, signing_key: bytes | None = None) -> VerificationReport:
    if not os.path.exists(path):
        return VerificationReport(ok=True, total=0)
    with open(path, "rb") as fh:
        lines = [line.rstrip(b"\n") for line in fh if line.strip()]
    return verify_records(lines, signing_key)


def read_records(path: str) -> list[dict]:
    """Parsed records, no verification; use verify_file first when it matters."""
    out: list[dict] = []
    if not os.path.exists(path):
        return out
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def signing_key_from_env(env: Mapping[str, str] | None = None) -> bytes | None:
    value = (env if env is not None else os.environ).get("GUARDRAIL_SIGNING_KEY", "")
    return value.encode("utf-8") if value else None


class EvidenceLedger:
    """Single appender over one ledger file, with an in-memory mirror.

    Opening an existing file verifies it; a tampered tail marks the chain
    broken and every later append is refused.
    """

    def __init__(
        self,
        path: str,
        signing_key: bytes | None = None,
        clock: Callable[[], datetime] | None = None,
    ):
        self.path = path
        self._key = signing_key
        self._clock = clock
        self._lock = threading.Lock()
        self._records: list[dict] = []
        self._prev_hash = GENESIS_HASH
        self._next_seq = 0
        self.broken = False
        self.broken_reason = ""
        if os.path.exists(path) and os.path.getsize(path) > 0:
            report = verify_file(path, signing_key)
            self._records = read_records(path) if report.ok else []
            if not report.ok:
                self.broken = True
                self.broken_reason = report.detail or "chain verification failed"
            else:
                self._next_seq = len(self._records)
                if self._records:
                    self._prev_hash = self._records[-1]["hash"]
        self._fh = open(path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def append(self, kind: str, body: Mapping, ts: datetime | None = None) -> dict:
        """Append one record; returns it with seq/hash assigned.

        Durable (flushed and fsynced) before return.
        """
        if kind not in RECORD_KINDS:
            raise LedgerError(f"unknown record kind {kind!r}")
        if ts is None:
            if self._clock is None:
                raise LedgerError("no timestamp given and no clock configured")
            ts = self._clock()
        with self._lock:
            if self.broken:
                raise LedgerError(f"chain is broken, append refused: {self.broken_reason}")
            record = {
                "seq": self._next_seq,
                "ts": format_instant(ts),
                "kind": kind,
                "body": jsonable(body),
                "prev_hash": self._prev_hash,
            }
            digest = record_hash(record)
            record["hash"] = digest
            if self._key is not None:
                record["sig"] = record_signature(self._key, digest)
            self._write_line(canonical_json(record))
            self._records.append(record)
            self._prev_hash = digest
            self._next_seq += 1
            return record

    def _write_line(self, text: str) -> None:
        # the one seam between deciding and durability; failures here mean
        # the decision must fail closed
        self._fh.write(text + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def records(self, from_seq: int = 0) -> list[dict]:
        with self._lock:
            return [r for r in self._records if r["seq"] >= from_seq]

    @property
    def next_seq(self) -> int:
        with self._lock:
            return self._next_seq

    def verify(self) -> VerificationReport:
        """Verify from disk, not memory; the file is the artifact."""
        with self._lock:
            return verify_file(self.path, self._key)
