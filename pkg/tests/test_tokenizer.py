import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from selfspec.tokenizer import EOT_ID, VOCAB_SIZE, ByteTokenizer


def test_vocab_layout():
    tok = ByteTokenizer()
    assert tok.vocab_size == VOCAB_SIZE == 257
    assert tok.eot_id == EOT_ID == 256


def test_round_trip_bulk_random_bytes():
    tok = ByteTokenizer()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(0, 40))
        data = bytes(rng.integers(0, 256, n, dtype=np.uint8))
        ids = tok.encode_bytes(data)
        assert all(0 <= i < 256 for i in ids)  # never the end-of-text id
        assert tok.decode_bytes(ids) == data


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_round_trip_property(data):
    tok = ByteTokenizer()
    assert tok.decode_bytes(tok.encode_bytes(data)) == data


def test_text_round_trip():
    tok = ByteTokenizer()
    s = "hello, wörld — bytes\n"
    assert tok.decode(tok.encode(s)) == s


def test_decode_skips_eot():
    tok = ByteTokenizer()
    assert tok.decode_bytes([104, 105, EOT_ID]) == b"hi"
