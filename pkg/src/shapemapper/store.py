"""Binary vector stores shared by latents ("LATS") and image/template embeddings ("VECS").

Layout, little-endian::

    magic[4] version:u16 count:u32 dim:u32
    count x ( id_len:u16 id:utf8[id_len] values:f32[dim] )
"""

from __future__ import annotations

import struct

import numpy as np

STORE_VERSION = 1
LATENT_MAGIC = b"LATS"
VECTOR_MAGIC = b"VECS"


def vectors_to_bytes(ids, vectors, magic: bytes = VECTOR_MAGIC) -> bytes:
    vectors = np.asarray(vectors, dtype="<f4")
    ids = list(ids)
    if vectors.ndim != 2 or len(ids) != len(vectors):
        raise ValueError(f"{len(ids)} ids for vectors of shape {vectors.shape}")
    parts = [magic, struct.pack("<HII", STORE_VERSION, len(ids), vectors.shape[1])]
    for sid, vec in zip(ids, vectors):
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(vec.tobytes())
    return b"".join(parts)


def vectors_from_bytes(data: bytes, magic: bytes | None = None) -> tuple[list[str], np.ndarray]:
    if magic is not None and data[:4] != magic:
        raise ValueError(f"expected a {magic.decode()} store, found magic {data[:4]!r}")
    if data[:4] not in (LATENT_MAGIC, VECTOR_MAGIC):
        raise ValueError(f"unknown vector store magic {data[:4]!r}")
    version, count, dim = struct.unpack_from("<HII", data, 4)
    if version != STORE_VERSION:
        raise ValueError(f"unsupported store version {version}")
    off = 14
    ids = []
    out = np.empty((count, dim), dtype=np.float32)
    for k in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        ids.append(data[off : off + n].decode("utf-8"))
        off += n
        out[k] = np.frombuffer(data, "<f4", dim, off)
        off += 4 * dim
    if off != len(data):
        raise ValueError("trailing bytes in vector store")
    return ids, out


def write_vectors(path, ids, vectors, magic: bytes = VECTOR_MAGIC) -> None:
    with open(path, "wb") as fh:
        fh.write(vectors_to_bytes(ids, vectors, magic))


def read_vectors(path, magic: bytes | None = None) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        return vectors_from_bytes(fh.read(), magic)


def write_latents(path, ids, vectors) -> None:
    write_vectors(path, ids, vectors, LATENT_MAGIC)


def read_latents(path) -> tuple[list[str], np.ndarray]:
    return read_vectors(path, LATENT_MAGIC)
