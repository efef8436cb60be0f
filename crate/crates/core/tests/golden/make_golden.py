"""Independent writer for the golden trace files.

Builds the same two bundles as tests/golden.rs using only the Python
standard library and writes python.trace and python_crash.trace next to
this script.
"""

import json
import os
import struct

MAGIC = b"AFTRACE\x00"
VERSION = 1

NODES = [
    {"id": 0, "kind": "Input", "inputs": []},
    {"id": 1, "kind": "Dense", "inputs": [0]},
    {"id": 2, "kind": "ReLU", "inputs": [1]},
]

# Tensors are given as (shape, list of u32 bit patterns).
FC = {
    0: ([2, 3], [0x3F800000, 0xC0200000, 0x00000000, 0x80000000, 0x40400000, 0x3F000000]),
    1: ([2, 2], [0x7FC00001, 0xFF800000, 0x00000001, 0x40000000]),
    2: ([2, 2], [0x7FC00001, 0x00000000, 0x00000001, 0x40000000]),
}
LOSS_OUTPUT = 0x7FC00000
LOSS_GRADIENT = ([2, 2], [0x3E800000, 0xBE800000, 0x7F800000, 0x80000000])
BC = {
    0: ([1, 2, 3], [0x3DCCCCCD, 0xBDCCCCCD, 0x00000000, 0x7F7FFFFF, 0xFF7FFFFF, 0x00800000]),
    1: ([1, 2, 2], [0x3F800000, 0x3F800000, 0xFFC00000, 0x00000000]),
    2: ([1, 2, 2], [0x3E800000, 0xBE800000, 0x7F800000, 0x80000000]),
}


def pack(bits):
    return b"".join(struct.pack("<I", b) for b in bits)


def encode(manifest, blob):
    text = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(text)) + text + blob


def ok_bundle():
    blob = bytearray()

    def put(node, shape, bits):
        entry = {"offset": len(blob), "length": 4 * len(bits), "shape": shape}
        if node is not None:
            entry["node"] = node
        blob.extend(pack(bits))
        return entry

    fc = [put(i, *FC[i]) for i in sorted(FC)]
    lc = {
        "loss_output": put(None, [], [LOSS_OUTPUT]),
        "loss_gradient": put(None, *LOSS_GRADIENT),
    }
    bc = [put(i, *BC[i]) for i in sorted(BC)]
    manifest = {
        "backend_id": "naive",
        "model_id": "m00000",
        "outcome": {"status": "nan"},
        "precision": "float32",
        "loss": "mean_squared_error",
        "nodes": NODES,
        "fc": fc,
        "lc": lc,
        "bc": bc,
    }
    return encode(manifest, bytes(blob))


def crash_bundle():
    manifest = {
        "backend_id": "naive+debug-abort",
        "model_id": "m00001",
        "outcome": {"status": "crash", "message": "debug-abort: aborting at node 2"},
        "precision": "float32",
        "nodes": NODES,
        "fc": [],
        "lc": None,
        "bc": [],
    }
    return encode(manifest, b"")


if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    with open(os.path.join(here, "python.trace"), "wb") as f:
        f.write(ok_bundle())
    with open(os.path.join(here, "python_crash.trace"), "wb") as f:
        f.write(crash_bundle())
