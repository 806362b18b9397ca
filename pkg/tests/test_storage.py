import zlib

import pytest

from orbitcad.broker.storage import SegmentedLog, StorageError, list_sessions
from orbitcad.sessionlog import SessionOp, encode_op


def op(i, body=None):
    return SessionOp(op_id=i, client_id="c1", wall_time=i * 10,
                     kind="set_active_model", body=body or {"model_id": f"m{i:04d}"})


def mkops(n, start=1):
    return [op(i) for i in range(start, start + n)]


def open_log(root, sid="s1", rotate=5):
    log = SegmentedLog(root, sid, rotate_ops=rotate, fsync_interval=0)
    log.recover()
    return log


def seed(root, n, sid="s1", rotate=5):
    log = open_log(root, sid, rotate)
    for o in mkops(n):
        log.append(o)
    log.close()


def test_round_trip_with_rotation(tmp_path):
    log = open_log(tmp_path)
    for o in mkops(12):
        log.append(o)
    log.close()
    names = sorted(p.name for p in tmp_path.glob("s1.*.log"))
    # segment file name carries its first op id
    assert names == ["s1.1.log", "s1.11.log", "s1.6.log"]

    log2 = open_log(tmp_path)
    assert log2.head == 12
    log2.append(op(13))
    log2.close()
    log3 = SegmentedLog(tmp_path, "s1", rotate_ops=5, fsync_interval=0)
    ops = log3.recover()
    assert [o.op_id for o in ops] == list(range(1, 14))
    assert ops[3].body == {"model_id": "m0004"}
    log3.close()


def test_recover_empty(tmp_path):
    log = SegmentedLog(tmp_path, "nil", rotate_ops=5, fsync_interval=0)
    assert log.recover() == []
    assert log.head == 0
    log.close()


def test_torn_tail_dropped_and_truncated(tmp_path):
    seed(tmp_path, 13)
    newest = tmp_path / "s1.11.log"
    newest.write_bytes(newest.read_bytes()[:-7])  # rip inside record 13

    log = open_log(tmp_path)
    assert [o.op_id for o in log.recover()] == list(range(1, 13))
    # the torn bytes are gone from disk, so appends resume cleanly
    log.append(op(13))
    log.close()
    check = SegmentedLog(tmp_path, "s1", rotate_ops=5, fsync_interval=0)
    assert [o.op_id for o in check.recover()] == list(range(1, 14))
    check.close()


def test_interior_corruption_raises(tmp_path):
    seed(tmp_path, 6, rotate=100)
    seg = tmp_path / "s1.1.log"
    data = bytearray(seg.read_bytes())
    lines = seg.read_bytes().split(b"\n")
    offset = len(lines[0]) + 1 + len(lines[1]) + 1 + 5  # inside record 3
    data[offset] ^= 0xFF
    seg.write_bytes(bytes(data))
    log = SegmentedLog(tmp_path, "s1", rotate_ops=100, fsync_interval=0)
    with pytest.raises(StorageError, match="checksum"):
        log.recover()


def test_seal_mismatch_raises(tmp_path):
    seed(tmp_path, 7, rotate=3)
    first = tmp_path / "s1.1.log"
    data = first.read_bytes()
    assert b"#seal " in data
    head, sealed_line, _ = data.rsplit(b"\n", 2)
    bad = sealed_line[:-1] + (b"9" if sealed_line[-1:] != b"9" else b"8")
    first.write_bytes(head + b"\n" + bad + b"\n")
    log = SegmentedLog(tmp_path, "s1", rotate_ops=3, fsync_interval=0)
    with pytest.raises(StorageError, match="seal"):
        log.recover()


def test_torn_sealed_segment_raises_not_drops(tmp_path):
    # only the NEWEST unsealed segment may lose a tail silently
    seed(tmp_path, 7, rotate=3)
    first = tmp_path / "s1.1.log"
    first.write_bytes(first.read_bytes()[:-12])
    log = SegmentedLog(tmp_path, "s1", rotate_ops=3, fsync_interval=0)
    with pytest.raises(StorageError):
        log.recover()


def test_append_contiguity(tmp_path):
    log = open_log(tmp_path, rotate=100)
    log.append(op(1))
    with pytest.raises(StorageError, match="expected op 2"):
        log.append(op(3))
    with pytest.raises(StorageError):
        log.append(op(1))
    log.close()


def test_compact_then_continue(tmp_path):
    squashed = [op(i, body={"model_id": "final"}) for i in (1, 2)]
    log = open_log(tmp_path, rotate=4)
    for o in mkops(10):
        log.append(o)
    log.compact(squashed)
    assert log.head == 2
    log.append(op(3))
    log.close()
    names = sorted(p.name for p in tmp_path.glob("s1.*.log"))
    assert names == ["s1.1.log", "s1.3.log"]

    check = SegmentedLog(tmp_path, "s1", rotate_ops=4, fsync_interval=0)
    got = check.recover()
    assert [o.op_id for o in got] == [1, 2, 3]
    assert got[0].body == {"model_id": "final"}
    check.close()


def ready_payload(ops):
    out = b""
    for o in ops:
        line = encode_op(o)
        out += line + b" " + f"{zlib.crc32(line) & 0xffffffff:08x}".encode() + b"\n"
    return out


def test_compact_crash_before_publish(tmp_path):
    # tmp file written but never renamed: stale tmp is discarded, the old
    # segments stay authoritative
    seed(tmp_path, 10, rotate=4)
    tmp = tmp_path / "s1.compact.tmp"
    tmp.write_bytes(b"partial")
    log = open_log(tmp_path, rotate=4)
    assert log.head == 10
    assert not tmp.exists()
    log.close()


def test_compact_crash_after_publish(tmp_path):
    # ready file present with old segments still on disk: recovery rolls the
    # compaction forward
    seed(tmp_path, 10, rotate=4)
    squashed = [op(i, body={"model_id": "final"}) for i in (1, 2)]
    (tmp_path / "s1.compact.ready").write_bytes(ready_payload(squashed))
    log = SegmentedLog(tmp_path, "s1", rotate_ops=4, fsync_interval=0)
    got = log.recover()
    assert [o.op_id for o in got] == [1, 2]
    assert got[1].body == {"model_id": "final"}
    assert not (tmp_path / "s1.compact.ready").exists()
    assert sorted(p.name for p in tmp_path.glob("s1*")) == ["s1.1.log"]
    log.close()


def test_compact_crash_mid_swap(tmp_path):
    # old segments already unlinked, rename still pending
    seed(tmp_path, 10, rotate=4)
    squashed = [op(i, body={"model_id": "final"}) for i in (1, 2)]
    for p in tmp_path.glob("s1.*.log"):
        p.unlink()
    (tmp_path / "s1.compact.ready").write_bytes(ready_payload(squashed))
    log = SegmentedLog(tmp_path, "s1", rotate_ops=4, fsync_interval=0)
    assert [o.op_id for o in log.recover()] == [1, 2]
    log.close()


def test_list_sessions(tmp_path):
    assert list_sessions(tmp_path) == []
    for sid in ("beta", "alpha"):
        log = SegmentedLog(tmp_path, sid, rotate_ops=10, fsync_interval=0)
        log.recover()
        log.append(op(1))
        log.close()
    assert list_sessions(tmp_path) == ["alpha", "beta"]


def test_fsync_interval_durable_on_close(tmp_path):
    log = SegmentedLog(tmp_path, "s7", rotate_ops=100, fsync_interval=5.0)
    log.recover()
    for o in mkops(3):
        log.append(o)
    log.close()
    check = SegmentedLog(tmp_path, "s7", rotate_ops=100, fsync_interval=5.0)
    assert len(check.recover()) == 3
    check.close()
