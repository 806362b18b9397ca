"""Chunked binary container for scene models — the server's internal storage
and wire format for processed models.

Layout (all integers little-endian):

    magic   4 bytes  b"OCSM"
    version u16      currently 1
    flags   u16      reserved, 0
    chunks  repeated [tag 4 bytes][length u64][payload]
        STRT  string table: u32 count, then per string u32 byte-length + UTF-8
        META  u32 model_id stridx, f64 unit_scale, u32 root node index
        NODE  u32 count, then per node (see _pack_node)
        MESH  u32 count, then per mesh: u32 id stridx, u32 vertex count,
              f64 x 3n positions, u32 lod count, per lod u32 triangle count
              + u32 x 3m indices
        END   empty payload, must be last
    crc32   u32 of every byte from magic through the END chunk

Serialization is deterministic: nodes in depth-first order from the root,
meshes in first-reference order, strings in first-use order. That makes
round trips byte-stable, which the tests rely on.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .scene import Mesh, RenderStyle, SceneModel, SceneNode, iter_subtree, validate
from .transforms import Transform

MAGIC = b"OCSM"
VERSION = 1


class ContainerError(Exception):
    pass


class _StringTable:
    def __init__(self):
        self._index: dict[str, int] = {}
        self.strings: list[str] = []

    def intern(self, s: str) -> int:
        if s not in self._index:
            self._index[s] = len(self.strings)
            self.strings.append(s)
        return self._index[s]

    def pack(self) -> bytes:
        parts = [struct.pack("<I", len(self.strings))]
        for s in self.strings:
            b = s.encode("utf-8")
            parts.append(struct.pack("<I", len(b)) + b)
        return b"".join(parts)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _pack_node(node: SceneNode, strings: _StringTable, node_index: dict[str, int], mesh_index: dict[str, int]) -> bytes:
    t = node.local_transform
    style = node.style
    parts = [
        struct.pack(
            "<IIIi",
            strings.intern(node.id),
            strings.intern(node.name),
            strings.intern(node.node_type),
            -1 if node.parent is None else node_index[node.parent],
        ),
        struct.pack("<I", len(node.children)),
        struct.pack(f"<{len(node.children)}I", *[node_index[c] for c in node.children]) if node.children else b"",
        struct.pack("<i", -1 if node.mesh is None else mesh_index[node.mesh]),
        struct.pack("<10d", *t.translation, *t.rotation, *t.scale),
        struct.pack("<B", 1 if style.color is not None else 0),
        struct.pack("<3d", *(style.color if style.color is not None else (0.0, 0.0, 0.0))),
        struct.pack("<d", style.opacity),
        struct.pack("<B", 1 if style.occlusion_only else 0),
    ]
    return b"".join(parts)


def serialize(model: SceneModel) -> bytes:
    validate(model)
    strings = _StringTable()
    order = list(iter_subtree(model, model.root))
    node_index = {nid: i for i, nid in enumerate(order)}

    mesh_order: list[str] = []
    mesh_index: dict[str, int] = {}
    for nid in order:
        mid = model.nodes[nid].mesh
        if mid is not None and mid not in mesh_index:
            mesh_index[mid] = len(mesh_order)
            mesh_order.append(mid)
    # meshes never referenced by a node are dropped (unreachable data)

    strings.intern(model.model_id)
    node_payloads = [_pack_node(model.nodes[nid], strings, node_index, mesh_index) for nid in order]

    mesh_parts = [struct.pack("<I", len(mesh_order))]
    for mid in mesh_order:
        mesh = model.meshes[mid]
        mesh_parts.append(struct.pack("<II", strings.intern(mid), mesh.positions.shape[0]))
        mesh_parts.append(np.ascontiguousarray(mesh.positions, dtype="<f8").tobytes())
        mesh_parts.append(struct.pack("<I", len(mesh.lods)))
        for lod in mesh.lods:
            mesh_parts.append(struct.pack("<I", lod.shape[0]))
            mesh_parts.append(np.ascontiguousarray(lod, dtype="<u4").tobytes())

    meta = struct.pack("<IdI", strings.intern(model.model_id), model.unit_scale, node_index[model.root])

    body = (
        MAGIC
        + struct.pack("<HH", VERSION, 0)
        + _chunk(b"STRT", strings.pack())
        + _chunk(b"META", meta)
        + _chunk(b"NODE", struct.pack("<I", len(order)) + b"".join(node_payloads))
        + _chunk(b"MESH", b"".join(mesh_parts))
        + _chunk(b"END ", b"")
    )
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(f"truncated container at byte {self.pos} (wanted {n} more)")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> SceneModel:
    if len(data) < 12:
        raise ContainerError("container too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ContainerError("container CRC mismatch")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise ContainerError("bad magic (not an OCSM container)")
    version, _flags = r.unpack("<HH")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")

    chunks: dict[bytes, bytes] = {}
    while True:
        tag = r.take(4)
        (length,) = r.unpack("<Q")
        chunks[tag] = r.take(length)
        if tag == b"END ":
            break

    for need in (b"STRT", b"META", b"NODE", b"MESH"):
        if need not in chunks:
            raise ContainerError(f"missing chunk {need!r}")

    sr = _Reader(chunks[b"STRT"])
    (count,) = sr.unpack("<I")
    strings = []
    for _ in range(count):
        (n,) = sr.unpack("<I")
        strings.append(sr.take(n).decode("utf-8"))

    mr = _Reader(chunks[b"META"])
    model_sid, unit_scale, root_idx = mr.unpack("<IdI")

    nr = _Reader(chunks[b"NODE"])
    (node_count,) = nr.unpack("<I")
    raw_nodes = []
    for _ in range(node_count):
        sid, name_sid, type_sid, parent = nr.unpack("<IIIi")
        (n_children,) = nr.unpack("<I")
        children = list(nr.unpack(f"<{n_children}I")) if n_children else []
        (mesh_idx,) = nr.unpack("<i")
        tvals = nr.unpack("<10d")
        (has_color,) = nr.unpack("<B")
        color = nr.unpack("<3d")
        (opacity,) = nr.unpack("<d")
        (occ,) = nr.unpack("<B")
        raw_nodes.append((sid, name_sid, type_sid, parent, children, mesh_idx, tvals, has_color, color, opacity, occ))

    xr = _Reader(chunks[b"MESH"])
    (mesh_count,) = xr.unpack("<I")
    mesh_ids: list[str] = []
    meshes: dict[str, Mesh] = {}
    for _ in range(mesh_count):
        sid, n_verts = xr.unpack("<II")
        positions = np.frombuffer(xr.take(n_verts * 24), dtype="<f8").reshape(-1, 3).copy()
        (n_lods,) = xr.unpack("<I")
        lods = []
        for _ in range(n_lods):
            (n_tris,) = xr.unpack("<I")
            lods.append(np.frombuffer(xr.take(n_tris * 12), dtype="<u4").reshape(-1, 3).copy())
        mid = strings[sid]
        mesh_ids.append(mid)
        meshes[mid] = Mesh(mesh_id=mid, positions=positions, lods=lods)

    nodes: dict[str, SceneNode] = {}
    ids = [strings[rn[0]] for rn in raw_nodes]
    for (sid, name_sid, type_sid, parent, children, mesh_idx, tvals, has_color, color, opacity, occ), nid in zip(
        raw_nodes, ids
    ):
        nodes[nid] = SceneNode(
            id=nid,
            name=strings[name_sid],
            node_type=strings[type_sid],
            parent=None if parent < 0 else ids[parent],
            children=[ids[c] for c in children],
            local_transform=Transform(
                translation=np.array(tvals[0:3]), rotation=np.array(tvals[3:7]), scale=np.array(tvals[7:10])
            ),
            mesh=None if mesh_idx < 0 else mesh_ids[mesh_idx],
            style=RenderStyle(
                color=tuple(color) if has_color else None, opacity=opacity, occlusion_only=bool(occ)
            ),
        )

    model = SceneModel(
        model_id=strings[model_sid], root=ids[root_idx], nodes=nodes, meshes=meshes, unit_scale=unit_scale
    )
    validate(model)
    return model
