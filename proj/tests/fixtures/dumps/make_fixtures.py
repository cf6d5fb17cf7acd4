"""Writes the dump fixtures with a writer independent of the C++ encoder.

valid.cora holds L=2, H=2, Q=1, C=5 with row (l, h) equal to
(j + 1 + 5k) / (15 + 25k) for k = l * 2 + h. The other files each break
exactly one rule of the format.
"""
import json
import struct

L, H, Q, C = 2, 2, 1, 5
layout = {
    "model": "fixture",
    "query": "what",
    "total_tokens": C,
    "query_span": [4, 5],
    "doc_spans": [{"id": "a", "start": 1, "end": 3}, {"id": "b", "start": 3, "end": 4}],
    "instruction_spans": [[0, 1]],
}


def encode(magic=b"CORA", version=1, dims=(L, H, Q, C), limit=L, blob=None):
    blob = (blob or json.dumps(layout, separators=(",", ":"))).encode()
    out = magic + struct.pack("<7I", version, *dims, limit, len(blob)) + blob
    for l in range(limit):
        for h in range(H):
            k = l * H + h
            for _ in range(Q):
                out += struct.pack("<5f", *[(j + 1 + 5 * k) / (15 + 25 * k) for j in range(C)])
    return out


files = {
    "valid.cora": encode(),
    "bad_magic.cora": encode(magic=b"CORB"),
    "version_mismatch.cora": encode(version=2),
    "truncated_payload.cora": encode()[:-3],
    "trailing_bytes.cora": encode() + b"\0\0\0\0",
    "dim_layout_mismatch.cora": encode(dims=(L, H, Q, C + 1)),
}
for name, data in files.items():
    with open(name, "wb") as f:
        f.write(data)
