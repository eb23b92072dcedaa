"""Byte-level tokenizer: 256 byte ids plus one end-of-text id.

Zero external assets and an exact round trip: decode(encode(b)) == b
for every byte string. The end-of-text id is never produced by encode.
"""

from __future__ import annotations

EOT_ID = 256
VOCAB_SIZE = 257


class ByteTokenizer:
    vocab_size = VOCAB_SIZE
    eot_id = EOT_ID

    def encode_bytes(self, data: bytes) -> list[int]:
        return list(data)

    def decode_bytes(self, ids: list[int]) -> bytes:
        return bytes(i for i in ids if i != EOT_ID)

    def encode(self, text: str) -> list[int]:
        return self.encode_bytes(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")
