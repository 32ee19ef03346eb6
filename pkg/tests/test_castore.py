import hashlib
import math
import os
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cane.castore import (BlockId, BlockKind, BlockStore, FileBlockStore, birthday_bound,
                          collision_probability, exact_collision_probability)
from cane.errors import BlockSizeError, CorruptionError, NotFoundError, SpecError


def exact_oracle(n, bits):
    """Exact collision probability with rational arithmetic."""
    space = 2 ** bits
    if n > space:
        return 1.0
    p = Fraction(1)
    for i in range(n):
        p *= Fraction(space - i, space)
    return float(1 - p)


@pytest.fixture(params=["memory", "disk"])
def store(request, tmp_path):
    return BlockStore() if request.param == "memory" else FileBlockStore(tmp_path / "s")


def test_block_id_is_sha512_of_bytes():
    assert BlockId.of(b"abc").digest == hashlib.sha512(b"abc").digest()
    assert len(BlockId.of(b"").digest) == 64


def test_empty_block_is_idempotent(store):
    d0 = store.put_block(b"")
    assert store.put_block(b"") == d0
    assert store.stats().unique_blocks == 1


def test_zero_block_stored_once(store):
    a = store.put_block(bytes(4096))
    b = store.put_block(bytes(4096))
    assert a == b
    assert store.stats().unique_blocks == 1


def test_single_bit_change_gives_new_id(store):
    b1 = os.urandom(100)
    b2 = bytearray(b1)
    b2[17] ^= 0x04
    assert store.put_block(b1) != store.put_block(bytes(b2))


@given(st.binary(max_size=4096))
@settings(max_examples=200)
def test_roundtrip_property(data):
    s = BlockStore()
    assert s.get_block(s.put_block(data)) == data


def test_unknown_id_not_found(store):
    with pytest.raises(NotFoundError):
        store.get_block(BlockId.of(os.urandom(16)))


def test_tampered_file_is_corruption_not_missing(tmp_path):
    s = FileBlockStore(tmp_path / "s")
    bid = s.put_block(b"hello world" * 10)
    path = s.block_path(bid)
    assert path.parent.name == bid.hex[:2]
    raw = bytearray(path.read_bytes())
    raw[3] ^= 0xFF
    path.write_bytes(bytes(raw))
    assert hashlib.sha512(bytes(raw)).digest() != bid.digest
    with pytest.raises(CorruptionError):
        s.get_block(bid)
    assert not isinstance(CorruptionError("x"), NotFoundError)


def test_oversized_data_block_rejected(store):
    with pytest.raises(BlockSizeError):
        store.put_block(bytes(4097))


def test_manifest_blocks_may_exceed_chunk_size(store):
    bid = store.put_block(bytes(20000), BlockKind.MANIFEST)
    assert store.stats().manifest_blocks == 1
    assert len(store.get_block(bid)) == 20000


def test_chunk_zero_mib(store):
    ids = store.chunk_and_store(bytes(1 << 20), 4096)
    assert len(ids) == 256 and len(set(ids)) == 1
    st_ = store.stats()
    assert st_.data_blocks == 1
    assert st_.logical_bytes == 1 << 20
    assert st_.physical_bytes == 4096


def test_chunk_empty(store):
    assert store.chunk_and_store(b"", 4096) == []


def test_chunk_sizes_and_reassembly(store):
    data = os.urandom(10000)
    ids = store.chunk_and_store(data, 4096)
    assert [len(store.get_block(i)) for i in ids] == [4096, 4096, 1808]
    assert b"".join(store.get_block(i) for i in ids) == data
    assert store.reassemble(ids) == data


@given(st.binary(max_size=20000), st.integers(1, 5000))
@settings(max_examples=50)
def test_chunking_property(data, size):
    s = BlockStore(chunk_size=max(size, 1))
    ids = s.chunk_and_store(data, size)
    assert len(ids) == math.ceil(len(data) / size)
    assert s.reassemble(ids) == data


def test_stats_fresh_and_two_blocks(store):
    assert all(v == 0 for v in store.stats().as_dict().values())
    store.put_block(b"a" * 4096)
    store.put_block(b"b" * 4096)
    assert store.stats().unique_blocks == 2


def test_physical_never_exceeds_logical(store):
    for i in range(20):
        store.put_block(bytes([i % 5]) * 100)
    s = store.stats()
    assert s.physical_bytes <= s.logical_bytes
    assert s.unique_blocks == len(store.block_ids()) == 5


def test_disk_store_reopens_with_config_and_counters(tmp_path):
    s = FileBlockStore(tmp_path / "s", chunk_size=1024)
    bid = s.put_block(b"x" * 10)
    again = FileBlockStore(tmp_path / "s", create=False)
    assert again.chunk_size == 1024
    assert again.get_block(bid) == b"x" * 10
    assert again.stats() == s.stats()


def test_missing_disk_store_without_create(tmp_path):
    with pytest.raises(NotFoundError):
        FileBlockStore(tmp_path / "nope", create=False)


def test_bad_configuration():
    with pytest.raises(SpecError):
        BlockStore(chunk_size=0)
    with pytest.raises(SpecError):
        BlockStore(hash_bits=256)


def test_fallback_fetch_is_verified():
    remote = BlockStore()
    good = remote.put_block(b"payload")
    local = BlockStore(fallback=remote.get_block)
    assert local.get_block(good) == b"payload"
    assert local.has_block(good)
    liar = BlockStore(fallback=lambda b: b"not it")
    with pytest.raises(CorruptionError):
        liar.get_block(good)


def test_corrupt_local_block_repaired_from_fallback(tmp_path):
    remote = BlockStore()
    bid = remote.put_block(b"data" * 20)
    local = FileBlockStore(tmp_path / "s", fallback=remote.get_block)
    local.put_block(b"data" * 20)
    local.block_path(bid).write_bytes(b"garbage")
    assert local.get_block(bid) == b"data" * 20
    assert local.block_path(bid).read_bytes() == b"data" * 20


# collision probability -------------------------------------------------------


def test_collision_examples():
    assert collision_probability(2 ** 140, 512) < 1e-70
    assert collision_probability(1, 512) == 0
    assert collision_probability(0, 512) == 0
    assert collision_probability(3, 4) == pytest.approx(0.1796875, abs=1e-15)
    assert exact_oracle(3, 4) == 0.1796875


def test_collision_matches_exact_oracle_on_grid():
    for bits in range(1, 21):
        for n in list(range(0, 65)) + [100, 257, 512, 777, 1000, 1024]:
            want = exact_oracle(n, bits)
            got = collision_probability(n, bits)
            if want == 0:
                assert got == 0
            else:
                assert abs(got - want) <= 0.1 * want, (n, bits, got, want)


@given(st.integers(2, 1024), st.integers(1, 20))
@settings(max_examples=300)
def test_exact_numpy_product_matches_rational_oracle(n, bits):
    assert exact_collision_probability(n, bits) == pytest.approx(exact_oracle(n, bits), rel=1e-9)


@given(st.integers(2, 1024), st.integers(1, 64))
def test_birthday_bound_is_an_upper_bound(n, bits):
    if bits <= 20:
        assert birthday_bound(n, bits) >= exact_oracle(n, bits) * (1 - 1e-12)
    assert 0 <= birthday_bound(n, bits) <= 1


def test_birthday_bound_tight_when_small():
    # n^2 / 2^(b+1) well below 1: the bound and exact value agree closely
    for n, bits in [(10, 20), (50, 20), (100, 30)]:
        exact = exact_collision_probability(n, bits)
        assert birthday_bound(n, bits) == pytest.approx(exact, rel=0.01)


def test_collision_monotone_in_n():
    vals = [collision_probability(n, 16) for n in range(0, 400, 7)]
    assert vals == sorted(vals)
