import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcspack.errors import DecodeError
from fedcspack.wire import (
    ENTRY_OVERHEAD,
    HEADER_LEN,
    PackedUpdate,
    UpdateEntry,
    decode_update,
    encode_update,
)


def make_update(client_id=3, round_=5, pack=8, payload_lens=(4,)):
    entries = tuple(
        UpdateEntry(
            package_index=j,
            theta=0.25 * j,
            beta=0.1,
            payload=np.arange(n, dtype=np.float32),
        )
        for j, n in enumerate(payload_lens)
    )
    return PackedUpdate(client_id=client_id, round=round_, pack=pack, entries=entries)


def test_header_only_is_22_bytes():
    u = make_update(payload_lens=())
    assert len(encode_update(u)) == 22


def test_one_entry_len4_is_54_bytes():
    u = make_update(payload_lens=(4,))
    assert len(encode_update(u)) == 22 + 16 + 16 == 54


def test_closed_form_length():
    u = make_update(payload_lens=(4, 7, 1))
    blob = encode_update(u)
    assert len(blob) == HEADER_LEN + sum(ENTRY_OVERHEAD + 4 * n for n in (4, 7, 1))
    assert len(blob) == u.encoded_length()


def test_roundtrip_simple():
    u = make_update(payload_lens=(3, 5))
    assert decode_update(encode_update(u)) == u


def test_bad_magic():
    blob = bytearray(encode_update(make_update()))
    blob[0] = ord("X")
    with pytest.raises(DecodeError, match="bad magic at offset 0"):
        decode_update(bytes(blob))


def test_bad_version():
    blob = bytearray(encode_update(make_update()))
    blob[4] = 9
    with pytest.raises(DecodeError, match="version"):
        decode_update(bytes(blob))


def test_truncated_payload():
    blob = encode_update(make_update(payload_lens=(4,)))
    with pytest.raises(DecodeError, match="truncated"):
        decode_update(blob[:-5])


def test_unsorted_entries():
    # hand-assemble two entries with descending indices
    good = encode_update(make_update(payload_lens=(1, 1)))
    import struct

    header = good[:18] + struct.pack("<I", 2)
    e1 = struct.pack("<IffI", 5, 0.0, 0.0, 0)
    e0 = struct.pack("<IffI", 2, 0.0, 0.0, 0)
    with pytest.raises(DecodeError, match="unsorted"):
        decode_update(header + e1 + e0)


def test_duplicate_entries_rejected_on_build():
    with pytest.raises(ValueError, match="sorted"):
        PackedUpdate(
            client_id=0,
            round=0,
            pack=4,
            entries=(
                UpdateEntry(1, 0.0, 0.0, np.zeros(1, dtype=np.float32)),
                UpdateEntry(1, 0.0, 0.0, np.zeros(1, dtype=np.float32)),
            ),
        )


def test_trailing_bytes():
    blob = encode_update(make_update())
    with pytest.raises(DecodeError, match="trailing"):
        decode_update(blob + b"\x00")


update_strategy = st.builds(
    lambda cid, rnd, pack, lens, seed: PackedUpdate(
        client_id=cid,
        round=rnd,
        pack=pack,
        entries=tuple(
            UpdateEntry(
                package_index=j,
                theta=float(np.float32(np.random.default_rng([seed, j]).uniform(-1, 1))),
                beta=float(np.float32(np.random.default_rng([seed, j, 1]).uniform(0, 5))),
                payload=np.random.default_rng([seed, j, 2]).normal(size=n).astype(np.float32),
            )
            for j, n in enumerate(lens)
        ),
    ),
    cid=st.integers(0, 2**32 - 1),
    rnd=st.integers(0, 10_000),
    pack=st.integers(1, 4096),
    lens=st.lists(st.integers(0, 32), max_size=12),
    seed=st.integers(0, 2**31 - 1),
)


@settings(max_examples=200)
@given(update_strategy)
def test_roundtrip_fuzz(u):
    blob = encode_update(u)
    assert len(blob) == u.encoded_length()
    assert decode_update(blob) == u
