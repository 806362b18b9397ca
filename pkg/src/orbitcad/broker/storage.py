"""Append-only segmented op log with crash recovery.

Each session owns a set of segment files named ``{session}.{first_op}.log``.
A segment line is the compact JSON wire form of one sequenced op, a space,
and the CRC32 of the JSON bytes in fixed-width hex. Finished segments end
with a seal line carrying the CRC of everything before it; the active
segment has no seal until it rotates.

Recovery walks segments in op order, verifies every CRC, and tolerates
exactly one kind of damage: a torn final line in the newest segment, which
a crash mid-append produces. Anything else is corruption and raises.
Appends flush to the OS before the caller is allowed to acknowledge the
op, so a killed process never loses an acked write; fsync cadence is
configurable for machine-failure durability.

Compaction replaces all segments with a squashed snapshot via a
ready-file protocol (write + fsync, rename to ``.compact.ready``, delete
old segments, rename into place) so a crash at any point leaves either
the old segments or the complete snapshot, never a mix.
"""

from __future__ import annotations

import os
import re
import zlib
from pathlib import Path

from ..sessionlog import SessionOp, decode_op, encode_op

SESSION_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
SEAL_PREFIX = "#seal "

DEFAULT_ROTATE_OPS = 10000


class StorageError(Exception):
    pass


def _record_line(op: SessionOp) -> bytes:
    payload = encode_op(op)
    return payload + b" " + f"{zlib.crc32(payload):08x}".encode() + b"\n"


def _parse_record(line: bytes, where: str) -> SessionOp:
    try:
        payload, crc_hex = line.rsplit(b" ", 1)
    except ValueError:
        raise StorageError(f"{where}: malformed record") from None
    try:
        if len(crc_hex) != 8 or zlib.crc32(payload) != int(crc_hex, 16):
            raise StorageError(f"{where}: record checksum mismatch")
    except ValueError:
        raise StorageError(f"{where}: record checksum mismatch") from None
    return decode_op(payload)


def _segment_name(session_id: str, first_op: int) -> str:
    return f"{session_id}.{first_op}.log"


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def list_sessions(root: Path) -> list:
    """Session ids present under the log directory, sorted."""
    found = set()
    if not root.is_dir():
        return []
    for entry in root.iterdir():
        m = re.match(r"^(.+)\.(\d+)\.log$", entry.name)
        if m and SESSION_ID_RE.match(m.group(1)):
            found.add(m.group(1))
        m = re.match(r"^(.+)\.compact\.ready$", entry.name)
        if m and SESSION_ID_RE.match(m.group(1)):
            found.add(m.group(1))
    return sorted(found)


class SegmentedLog:
    """Durable op log for one session.

    ``recover()`` must run before appends; it replays what disk holds and
    positions the writer. ``append`` requires the op to carry the next
    sequence number, which the broker assigns.
    """

    def __init__(self, root: Path, session_id: str,
                 rotate_ops: int = DEFAULT_ROTATE_OPS,
                 fsync_interval: float = 0.0):
        if not SESSION_ID_RE.match(session_id):
            raise StorageError(f"invalid session id {session_id!r}")
        self.root = Path(root)
        self.session_id = session_id
        self.rotate_ops = max(1, rotate_ops)
        self.fsync_interval = fsync_interval
        self.head = 0
        self._fh = None
        self._active_first = 0
        self._active_count = 0
        self._active_payload_crc = 0
        self._last_fsync = 0.0
        self._recovered = False

    # -------------------------------------------------------- recovery

    def _segments(self) -> list:
        out = []
        if self.root.is_dir():
            pattern = re.compile(
                rf"^{re.escape(self.session_id)}\.(\d+)\.log$")
            for entry in self.root.iterdir():
                m = pattern.match(entry.name)
                if m:
                    out.append((int(m.group(1)), entry))
        out.sort()
        return out

    def _finish_pending_compaction(self) -> None:
        ready = self.root / f"{self.session_id}.compact.ready"
        tmp = self.root / f"{self.session_id}.compact.tmp"
        if tmp.exists():
            tmp.unlink()  # incomplete snapshot, segments still authoritative
        if ready.exists():
            # snapshot is complete: old segments are stale duplicates
            for _first, path in self._segments():
                path.unlink()
            ready.rename(self.root / _segment_name(self.session_id, 1))
            _fsync_dir(self.root)

    def _read_segment(self, path: Path, is_last: bool) -> tuple[list, bool, int]:
        """Returns (ops, sealed, payload_crc)."""
        data = path.read_bytes()
        ops = []
        sealed = False
        crc = 0
        offset = 0
        while offset < len(data):
            nl = data.find(b"\n", offset)
            if nl < 0:
                # torn tail: allowed only where a crash could leave one
                if is_last and not sealed:
                    break
                raise StorageError(f"{path.name}: truncated record")
            line = data[offset:nl]
            offset = nl + 1
            if sealed:
                raise StorageError(f"{path.name}: data after seal")
            if line.startswith(SEAL_PREFIX.encode()):
                parts = line.decode().split()
                if len(parts) != 3 or int(parts[1], 16) != crc or int(parts[2]) != len(ops):
                    raise StorageError(f"{path.name}: seal mismatch")
                sealed = True
                continue
            try:
                op = _parse_record(line, path.name)
            except StorageError:
                at_eof = offset >= len(data)
                if is_last and not sealed and at_eof:
                    break  # torn final line, drop it
                raise
            crc = zlib.crc32(line + b"\n", crc)
            ops.append(op)
        return ops, sealed, crc

    def recover(self) -> list:
        """Replay the on-disk log; returns all sequenced ops in order and
        arms the writer at the recovered head."""
        self.root.mkdir(parents=True, exist_ok=True)
        self._finish_pending_compaction()
        segments = self._segments()
        ops = []
        for idx, (first, path) in enumerate(segments):
            is_last = idx == len(segments) - 1
            seg_ops, sealed, crc = self._read_segment(path, is_last)
            if not is_last and not sealed:
                raise StorageError(f"{path.name}: interior segment missing seal")
            if seg_ops and seg_ops[0].op_id != first:
                raise StorageError(
                    f"{path.name}: first op {seg_ops[0].op_id} does not match name")
            for op in seg_ops:
                if op.op_id <= (ops[-1].op_id if ops else 0):
                    raise StorageError(f"{path.name}: op ids not increasing at {op.op_id}")
                ops.append(op)
            if is_last:
                if sealed:
                    # rotated cleanly; appends start a fresh segment
                    self._active_first = 0
                    self._active_count = 0
                    self._active_payload_crc = 0
                else:
                    self._active_first = first
                    self._active_count = len(seg_ops)
                    self._active_payload_crc = crc
                    # drop any torn tail before reopening for append
                    good = b"".join(_record_line(o) for o in seg_ops)
                    if len(good) != path.stat().st_size:
                        path.write_bytes(good)
        self.head = ops[-1].op_id if ops else 0
        if segments and self._active_first:
            last_path = segments[-1][1]
            self._fh = open(last_path, "ab")
        self._recovered = True
        return ops

    # --------------------------------------------------------- writing

    def _seal_active(self) -> None:
        if self._fh is None:
            return
        seal = f"{SEAL_PREFIX}{self._active_payload_crc:08x} {self._active_count}\n"
        self._fh.write(seal.encode())
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        self._fh = None
        self._active_first = 0
        self._active_count = 0
        self._active_payload_crc = 0

    def _open_segment(self, first_op: int) -> None:
        path = self.root / _segment_name(self.session_id, first_op)
        if path.exists():
            raise StorageError(f"segment {path.name} already exists")
        self._fh = open(path, "ab")
        self._active_first = first_op
        self._active_count = 0
        self._active_payload_crc = 0
        _fsync_dir(self.root)

    def append(self, op: SessionOp) -> None:
        """Durably append one sequenced op. Returns only after the bytes
        reached the OS, so an ack sent afterwards survives a process kill."""
        if not self._recovered:
            raise StorageError("recover() must run before append")
        if op.op_id != self.head + 1:
            raise StorageError(f"append expected op {self.head + 1}, got {op.op_id}")
        if self._fh is not None and self._active_count >= self.rotate_ops:
            self._seal_active()
        if self._fh is None:
            self._open_segment(op.op_id)
        line = _record_line(op)
        self._fh.write(line)
        self._fh.flush()
        now = os.times().elapsed
        if self.fsync_interval <= 0 or now - self._last_fsync >= self.fsync_interval:
            os.fsync(self._fh.fileno())
            self._last_fsync = now
        self._active_payload_crc = zlib.crc32(line, self._active_payload_crc)
        self._active_count += 1
        self.head = op.op_id

    def compact(self, squashed: list) -> None:
        """Atomically replace every segment with the given renumbered ops.
        The caller guarantees no clients hold references to old op ids."""
        if not self._recovered:
            raise StorageError("recover() must run before compact")
        for i, op in enumerate(squashed):
            if op.op_id != i + 1:
                raise StorageError("compacted ops must be renumbered from 1")
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        tmp = self.root / f"{self.session_id}.compact.tmp"
        ready = self.root / f"{self.session_id}.compact.ready"
        crc = 0
        count = 0
        with open(tmp, "wb") as fh:
            for op in squashed:
                line = _record_line(op)
                fh.write(line)
                crc = zlib.crc32(line, crc)
                count += 1
            fh.write(f"{SEAL_PREFIX}{crc:08x} {count}\n".encode())
            fh.flush()
            os.fsync(fh.fileno())
        tmp.rename(ready)
        _fsync_dir(self.root)
        for _first, path in self._segments():
            path.unlink()
        ready.rename(self.root / _segment_name(self.session_id, 1))
        _fsync_dir(self.root)
        self.head = len(squashed)
        self._active_first = 0
        self._active_count = 0
        self._active_payload_crc = 0
        # sealed snapshot: next append opens a fresh segment

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None
