import pytest

import luda


def test_store_round_trip(tmp_path):
    with luda.Store(str(tmp_path / "db"), memtable_bytes=64 << 10) as s:
        for i in range(2000):
            s.put(b"k%05d" % i, b"v%d" % i)
        s.delete(b"k00007")
        s.flush()
        s.wait_for_idle()
        assert s.get(b"k00001") == b"v1"
        assert s.get(b"k00007") is None
        assert s.get(b"missing") is None
        assert s.stats()["puts"] == 2000
        assert sum(s.levels()) > 0


def test_reopen_after_close(tmp_path):
    path = str(tmp_path / "db")
    s = luda.Store(path)
    s.put(b"a", b"1")
    s.flush()
    s.close()
    with pytest.raises(luda.StoreClosed):
        s.put(b"b", b"2")
    with luda.Store(path) as again:
        assert again.get(b"a") == b"1"


def test_forced_compaction_inline_and_offload(tmp_path):
    for engine in ("inline", "offload"):
        with luda.Store(str(tmp_path / engine), engine=engine, memtable_bytes=32 << 10) as s:
            for round_ in range(4):
                for i in range(500):
                    s.put(b"key%04d" % i, b"%d-%d" % (round_, i))
                s.flush()
            s.wait_for_idle()
            s.compact_once(True)
            assert s.get(b"key0042") == b"3-42"
            assert all(j["engine"] == engine or j["fell_back"] for j in s.compaction_log())


def test_sst_round_trip():
    entries = [(b"b", 5, False, b"two"), (b"a", 9, True, b""), (b"a", 3, False, b"one")]
    data = luda.build_sst(entries)
    got = luda.read_sst(data)
    assert got == [(b"a", 9, True, b""), (b"a", 3, False, b"one"), (b"b", 5, False, b"two")]


def test_corrupt_sst_raises():
    data = bytearray(luda.build_sst([(b"k%03d" % i, i + 1, False, b"x" * 50) for i in range(100)]))
    data[10] ^= 0xFF
    with pytest.raises(luda.Error):
        luda.read_sst(bytes(data))


def test_engines_agree():
    for seed in range(20):
        r = luda.compare_engines(seed)
        assert r["identical"], seed
        assert r["offload"]["input_entries"] == r["reference"]["input_entries"]


def test_bench_small(tmp_path):
    r = luda.bench(str(tmp_path / "b"), mode="offload", records=5000, ops=5000, value_size=64)
    assert [p["phase"] for p in r["phases"]] == ["load", "run"]
    assert r["mismatches"] == 0
    assert r["phases"][1]["ops"] == 5000
    with pytest.raises(luda.InvalidArgument):
        luda.bench(str(tmp_path / "b"))


def test_latency_recorder():
    rec = luda.LatencyRecorder()
    assert rec.summary("read")["p99"] is None
    for v in range(1, 1001):
        rec.record("read", float(v))
    s = rec.summary("read")
    assert s["count"] == 1000
    assert 985 <= s["p99"] <= 1000
    with pytest.raises(ValueError):
        rec.record("scan", 1.0)
