"""Open mesh format import/export: OBJ, STL (binary + ASCII), PLY (binary
little-endian + ASCII), glTF 2.0 (.glb and .gltf with embedded buffers).

Importers build a SceneModel with deterministic node/mesh ids (n0, n1, ...
and m0, m1, ... in encounter order), so identical input bytes produce an
identical container serialization. Exporters for flat formats (OBJ/STL/PLY)
bake world transforms into vertex positions; glTF preserves the hierarchy
with per-node TRS and carries style/type metadata in node ``extras`` under
the keys ``nodeType``, ``color``, ``opacity`` and ``occlusionOnly``.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .scene import Mesh, RenderStyle, SceneModel, SceneNode, total_triangles, world_transforms
from .transforms import Transform, quat_from_matrix

log = logging.getLogger(__name__)

FORMATS = ("obj", "stl", "ply", "gltf", "glb")


class ParseError(Exception):
    """Malformed input file; message carries a line or byte offset."""


@dataclass
class ImportReport:
    node_count: int = 0
    mesh_count: int = 0
    triangle_count: int = 0
    warnings: list[str] = field(default_factory=list)


def import_model(data: bytes, fmt: str, model_id: str = "model", unit_scale: float = 1.0) -> tuple[SceneModel, ImportReport]:
    fmt = fmt.lower().lstrip(".")
    if fmt == "obj":
        model, report = _import_obj(data, model_id)
    elif fmt == "stl":
        model, report = _import_stl(data, model_id)
    elif fmt == "ply":
        model, report = _import_ply(data, model_id)
    elif fmt in ("gltf", "glb"):
        model, report = _import_gltf(data, model_id)
    else:
        raise ParseError(f"unsupported import format {fmt!r}")
    model.unit_scale = unit_scale
    report.node_count = len(model.nodes)
    report.mesh_count = len(model.meshes)
    report.triangle_count = total_triangles(model)
    if report.triangle_count == 0:
        report.warnings.append("imported model contains no triangles")
    return model, report


def export_model(model: SceneModel, fmt: str) -> bytes:
    fmt = fmt.lower().lstrip(".")
    if fmt == "obj":
        return _export_obj(model)
    if fmt == "stl":
        return _export_stl(model)
    if fmt == "ply":
        return _export_ply(model)
    if fmt == "glb":
        return _export_gltf(model, binary=True)
    if fmt == "gltf":
        return _export_gltf(model, binary=False)
    raise ParseError(f"unsupported export format {fmt!r}")


# ---------------------------------------------------------------- builders


class _ModelBuilder:
    """Accumulates nodes/meshes with deterministic id assignment."""

    def __init__(self, model_id: str):
        self.model_id = model_id
        self.nodes: dict[str, SceneNode] = {}
        self.meshes: dict[str, Mesh] = {}
        self.root_id = self._new_node_id()
        self.nodes[self.root_id] = SceneNode(id=self.root_id, name=model_id)

    def _new_node_id(self) -> str:
        return f"n{len(self.nodes)}"

    def _new_mesh_id(self) -> str:
        return f"m{len(self.meshes)}"

    def add_node(self, name: str, parent: str | None = None, node_type: str = "",
                 transform: Transform | None = None, style: RenderStyle | None = None) -> str:
        parent = parent or self.root_id
        nid = self._new_node_id()
        self.nodes[nid] = SceneNode(
            id=nid, name=name, node_type=node_type, parent=parent,
            local_transform=transform or Transform.identity(),
            style=style or RenderStyle(),
        )
        self.nodes[parent].children.append(nid)
        return nid

    def attach_mesh(self, node_id: str, positions: np.ndarray, faces: np.ndarray) -> str:
        mid = self._new_mesh_id()
        self.meshes[mid] = Mesh(mesh_id=mid, positions=positions, lods=[faces])
        self.nodes[node_id].mesh = mid
        return mid

    def build(self) -> SceneModel:
        return SceneModel(model_id=self.model_id, root=self.root_id, nodes=self.nodes, meshes=self.meshes)


def _compact_mesh(positions: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop vertices not referenced by any face, remapping indices."""
    if faces.size == 0:
        return np.zeros((0, 3)), faces.reshape(-1, 3).astype(np.uint32)
    used, inverse = np.unique(faces.reshape(-1), return_inverse=True)
    return positions[used], inverse.reshape(-1, 3).astype(np.uint32)


# -------------------------------------------------------------------- OBJ


def _import_obj(data: bytes, model_id: str) -> tuple[SceneModel, ImportReport]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"OBJ is not valid UTF-8 at byte {e.start}") from None
    b = _ModelBuilder(model_id)
    report = ImportReport()
    verts: list[tuple[float, float, float]] = []
    groups: dict[str, list[list[int]]] = {}
    order: list[str] = []
    current = None

    def faces_for(name: str) -> list[list[int]]:
        if name not in groups:
            groups[name] = []
            order.append(name)
        return groups[name]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kw = parts[0]
        if kw == "v":
            if len(parts) < 4:
                raise ParseError(f"OBJ line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise ParseError(f"OBJ line {lineno}: bad vertex coordinate") from None
        elif kw in ("g", "o"):
            current = " ".join(parts[1:]) if len(parts) > 1 else "unnamed"
            faces_for(current)
        elif kw == "f":
            if len(parts) < 4:
                raise ParseError(f"OBJ line {lineno}: face needs at least 3 vertices")
            idx = []
            for p in parts[1:]:
                v = p.split("/")[0]
                try:
                    i = int(v)
                except ValueError:
                    raise ParseError(f"OBJ line {lineno}: bad face index {p!r}") from None
                i = i - 1 if i > 0 else len(verts) + i
                if i < 0 or i >= len(verts):
                    raise ParseError(f"OBJ line {lineno}: face index {v} out of range")
                idx.append(i)
            target = faces_for(current if current is not None else "unnamed")
            for k in range(1, len(idx) - 1):  # fan triangulation
                target.append([idx[0], idx[k], idx[k + 1]])
        # vn/vt/usemtl/mtllib/s are accepted and ignored

    positions = np.array(verts, dtype=np.float64).reshape(-1, 3)
    for name in order:
        fl = groups[name]
        nid = b.add_node(name)
        if not fl:
            report.warnings.append(f"group {name!r} has no faces")
            continue
        pts, faces = _compact_mesh(positions, np.array(fl, dtype=np.int64))
        b.attach_mesh(nid, pts, faces)
    if not order:
        report.warnings.append("OBJ contains no groups or faces")
    return b.build(), report


def _fmt_coord(x: float) -> str:
    return f"{x:.9g}"


def _export_obj(model: SceneModel) -> bytes:
    worlds = world_transforms(model)
    lines = ["# exported by orbitcad"]
    offset = 1
    for nid, node in _meshed_nodes(model):
        mesh = model.meshes[node.mesh]
        w = worlds[nid]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        lines.append(f"o {node.name or nid}")
        for p in pts:
            lines.append(f"v {_fmt_coord(p[0])} {_fmt_coord(p[1])} {_fmt_coord(p[2])}")
        for t in mesh.indices:
            lines.append(f"f {t[0] + offset} {t[1] + offset} {t[2] + offset}")
        offset += pts.shape[0]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _meshed_nodes(model: SceneModel):
    from .scene import iter_subtree

    for nid in iter_subtree(model, model.root):
        node = model.nodes[nid]
        if node.mesh is not None:
            yield nid, node


# -------------------------------------------------------------------- STL


def _import_stl(data: bytes, model_id: str) -> tuple[SceneModel, ImportReport]:
    report = ImportReport()
    is_ascii = data[:5].lower() == b"solid" and b"facet" in data[:4096]
    if is_ascii:
        tris, name = _parse_stl_ascii(data)
    else:
        tris, name = _parse_stl_binary(data)
    b = _ModelBuilder(model_id)
    nid = b.add_node(name or "stl")
    if tris.shape[0]:
        positions = tris.reshape(-1, 3)
        faces = np.arange(positions.shape[0], dtype=np.uint32).reshape(-1, 3)
        positions, faces = _weld_vertices(positions, faces)
        b.attach_mesh(nid, positions, faces)
    else:
        report.warnings.append("STL contains no triangles")
    return b.build(), report


def _weld_vertices(positions: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge exactly-equal vertices (STL repeats each corner per facet)."""
    uniq, inverse = np.unique(positions, axis=0, return_inverse=True)
    return uniq, inverse[faces.reshape(-1)].reshape(-1, 3).astype(np.uint32)


def _parse_stl_binary(data: bytes) -> tuple[np.ndarray, str]:
    if len(data) < 84:
        raise ParseError(f"binary STL truncated: {len(data)} bytes, header needs 84")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise ParseError(f"binary STL truncated at byte {len(data)}: {count} triangles need {expected}")
    rec = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84).reshape(count, 50)
    tris = rec[:, 12:48].copy().view("<f4").reshape(count, 3, 3).astype(np.float64)
    name = data[:80].split(b"\0")[0].decode("ascii", "replace").strip()
    return tris, name


def _parse_stl_ascii(data: bytes) -> tuple[np.ndarray, str]:
    text = data.decode("ascii", "replace")
    name_match = re.match(r"\s*solid\s*(\S*)", text)
    name = name_match.group(1) if name_match else ""
    coords = re.findall(r"vertex\s+([-\d.eE+]+)\s+([-\d.eE+]+)\s+([-\d.eE+]+)", text)
    if len(coords) % 3 != 0:
        raise ParseError(f"ASCII STL has {len(coords)} vertex lines, not a multiple of 3")
    tris = np.array(coords, dtype=np.float64).reshape(-1, 3, 3)
    return tris, name


def _export_stl(model: SceneModel) -> bytes:
    worlds = world_transforms(model)
    if len([1 for _ in _meshed_nodes(model)]) > 1:
        log.warning("STL cannot express hierarchy; exporting %s flattened", model.model_id)
    chunks = []
    total = 0
    for nid, node in _meshed_nodes(model):
        mesh = model.meshes[node.mesh]
        w = worlds[nid]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        tri = pts[mesh.indices.reshape(-1)].reshape(-1, 3, 3).astype("<f4")
        n = tri.shape[0]
        total += n
        rec = np.zeros((n, 50), dtype=np.uint8)
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        normals = np.cross(e1, e2)
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, lens, out=np.zeros_like(normals), where=lens > 0)
        rec[:, 0:12] = normals.astype("<f4").view(np.uint8).reshape(n, 12)
        rec[:, 12:48] = tri.view(np.uint8).reshape(n, 36)
        chunks.append(rec.tobytes())
    header = (model.model_id.encode("ascii", "replace")[:80]).ljust(80, b"\0")
    return header + struct.pack("<I", total) + b"".join(chunks)


# -------------------------------------------------------------------- PLY


def _import_ply(data: bytes, model_id: str) -> tuple[SceneModel, ImportReport]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing header)")
    header_end = data.find(b"\n", end) + 1
    header = data[:header_end].decode("ascii", "replace")
    body = data[header_end:]

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for lineno, line in enumerate(header.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"PLY header line {lineno}: property before element")
            # stored as (name, type spec); list types keep their two-part spec
            if parts[1] == "list":
                elements[-1][2].append((parts[4], f"list {parts[2]} {parts[3]}"))
            else:
                elements[-1][2].append((parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")

    if fmt == "ascii":
        verts, faces = _parse_ply_ascii(body, elements)
    else:
        verts, faces = _parse_ply_binary(body, elements)

    b = _ModelBuilder(model_id)
    report = ImportReport()
    nid = b.add_node("ply")
    if faces.shape[0]:
        pts, fc = _compact_mesh(verts, faces)
        b.attach_mesh(nid, pts, fc)
    else:
        report.warnings.append("PLY contains no faces")
    return b.build(), report


_PLY_DTYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_ascii(body: bytes, elements) -> tuple[np.ndarray, np.ndarray]:
    tokens = body.decode("ascii", "replace").split("\n")
    verts, faces = [], []
    row = 0
    for name, count, props in elements:
        for _ in range(count):
            while row < len(tokens) and not tokens[row].strip():
                row += 1
            if row >= len(tokens):
                raise ParseError(f"PLY body truncated in element {name!r}")
            vals = tokens[row].split()
            row += 1
            if name == "vertex":
                names = [p[0] for p in props]
                try:
                    verts.append([float(vals[names.index(c)]) for c in ("x", "y", "z")])
                except (ValueError, IndexError):
                    raise ParseError(f"PLY vertex row malformed: {tokens[row - 1]!r}") from None
            elif name == "face":
                n = int(vals[0])
                idx = [int(v) for v in vals[1 : 1 + n]]
                for k in range(1, n - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_ply_binary(body: bytes, elements) -> tuple[np.ndarray, np.ndarray]:
    pos = 0
    verts = np.zeros((0, 3))
    faces: list[list[int]] = []
    for name, count, props in elements:
        if name == "vertex" and all(not p[1].startswith("list") for p in props):
            dtype = np.dtype([(p[0], "<" + _PLY_DTYPES[p[1]]) for p in props])
            need = dtype.itemsize * count
            if pos + need > len(body):
                raise ParseError(f"PLY body truncated at byte {pos} in vertex element")
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos)
            pos += need
            verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
        elif name == "face":
            spec = props[0][1].split()
            if len(spec) != 3 or spec[0] != "list":
                raise ParseError("PLY face element must start with a list property")
            cdt = np.dtype("<" + _PLY_DTYPES[spec[1]])
            idt = np.dtype("<" + _PLY_DTYPES[spec[2]])
            for _ in range(count):
                if pos + cdt.itemsize > len(body):
                    raise ParseError(f"PLY body truncated at byte {pos} in face element")
                n = int(np.frombuffer(body, dtype=cdt, count=1, offset=pos)[0])
                pos += cdt.itemsize
                if pos + idt.itemsize * n > len(body):
                    raise ParseError(f"PLY body truncated at byte {pos} in face element")
                idx = np.frombuffer(body, dtype=idt, count=n, offset=pos).astype(np.int64)
                pos += idt.itemsize * n
                for k in range(1, n - 1):
                    faces.append([int(idx[0]), int(idx[k]), int(idx[k + 1])])
        else:
            # skip unknown elements; list properties defeat fixed-size skipping
            if any(p[1].startswith("list") for p in props) and count:
                raise ParseError(f"cannot skip PLY element {name!r} with list properties")
            dtype = np.dtype([(p[0], "<" + _PLY_DTYPES[p[1]]) for p in props])
            pos += dtype.itemsize * count
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def _export_ply(model: SceneModel) -> bytes:
    worlds = world_transforms(model)
    all_pts, all_faces = [], []
    offset = 0
    nmeshed = 0
    for nid, node in _meshed_nodes(model):
        nmeshed += 1
        mesh = model.meshes[node.mesh]
        w = worlds[nid]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        all_pts.append(pts)
        all_faces.append(mesh.indices.astype(np.int64) + offset)
        offset += pts.shape[0]
    if nmeshed > 1:
        log.warning("PLY cannot express hierarchy; exporting %s flattened", model.model_id)
    pts = np.concatenate(all_pts) if all_pts else np.zeros((0, 3))
    faces = np.concatenate(all_faces) if all_faces else np.zeros((0, 3), dtype=np.int64)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {faces.shape[0]}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode("ascii")
    vbytes = np.ascontiguousarray(pts, dtype="<f8").tobytes()
    frec = np.zeros((faces.shape[0],), dtype=np.dtype([("n", "u1"), ("i", "<i4", (3,))]))
    frec["n"] = 3
    frec["i"] = faces
    return header + vbytes + frec.tobytes()


# ------------------------------------------------------------------- glTF


_GLB_MAGIC = 0x46546C67
_COMPONENT_DTYPES = {5120: "i1", 5121: "u1", 5122: "i2", 5123: "u2", 5125: "u4", 5126: "f4"}
_TYPE_WIDTH = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}


def _import_gltf(data: bytes, model_id: str) -> tuple[SceneModel, ImportReport]:
    if len(data) >= 12 and struct.unpack_from("<I", data, 0)[0] == _GLB_MAGIC:
        doc, bin_chunk = _parse_glb(data)
    else:
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"glTF JSON parse failure: {e}") from None
        bin_chunk = None
    return _build_from_gltf(doc, bin_chunk, model_id)


def _parse_glb(data: bytes) -> tuple[dict, bytes | None]:
    magic, version, length = struct.unpack_from("<III", data, 0)
    if version != 2:
        raise ParseError(f"GLB version {version} unsupported")
    if length > len(data):
        raise ParseError(f"GLB truncated: header says {length} bytes, got {len(data)}")
    pos = 12
    doc = None
    bin_chunk = None
    while pos + 8 <= length:
        clen, ctype = struct.unpack_from("<II", data, pos)
        payload = data[pos + 8 : pos + 8 + clen]
        if ctype == 0x4E4F534A:  # JSON
            doc = json.loads(payload.decode("utf-8"))
        elif ctype == 0x004E4942:  # BIN
            bin_chunk = payload
        pos += 8 + clen + (-clen % 4 if ctype == 0 else 0)
        pos += 0
    if doc is None:
        raise ParseError("GLB has no JSON chunk")
    return doc, bin_chunk


def _gltf_buffer(doc: dict, index: int, bin_chunk: bytes | None) -> bytes:
    buf = doc["buffers"][index]
    uri = buf.get("uri")
    if uri is None:
        if bin_chunk is None:
            raise ParseError("glTF buffer has no uri and no GLB BIN chunk")
        return bin_chunk
    if uri.startswith("data:"):
        b64 = uri.split(",", 1)[1]
        return base64.b64decode(b64)
    raise ParseError(f"external glTF buffer uri {uri!r} not supported; embed buffers or use .glb")


def _gltf_accessor(doc: dict, index: int, bin_chunk: bytes | None) -> np.ndarray:
    acc = doc["accessors"][index]
    view = doc["bufferViews"][acc["bufferView"]]
    raw = _gltf_buffer(doc, view["buffer"], bin_chunk)
    dtype = np.dtype("<" + _COMPONENT_DTYPES[acc["componentType"]])
    width = _TYPE_WIDTH[acc["type"]]
    count = acc["count"]
    offset = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    stride = view.get("byteStride") or dtype.itemsize * width
    if stride == dtype.itemsize * width:
        arr = np.frombuffer(raw, dtype=dtype, count=count * width, offset=offset)
    else:
        rows = [np.frombuffer(raw, dtype=dtype, count=width, offset=offset + i * stride) for i in range(count)]
        arr = np.concatenate(rows)
    return arr.reshape(count, width) if width > 1 else arr


def _build_from_gltf(doc: dict, bin_chunk: bytes | None, model_id: str) -> tuple[SceneModel, ImportReport]:
    b = _ModelBuilder(model_id)
    report = ImportReport()
    mesh_cache: dict[int, str] = {}

    def mesh_for(gltf_mesh_index: int, node_id: str):
        if gltf_mesh_index in mesh_cache:
            b.nodes[node_id].mesh = mesh_cache[gltf_mesh_index]
            return
        gm = doc["meshes"][gltf_mesh_index]
        pts_parts, face_parts = [], []
        offset = 0
        for prim in gm.get("primitives", []):
            if prim.get("mode", 4) != 4:
                report.warnings.append(f"mesh {gltf_mesh_index}: non-triangle primitive skipped")
                continue
            pos = _gltf_accessor(doc, prim["attributes"]["POSITION"], bin_chunk).astype(np.float64)
            if "indices" in prim:
                idx = _gltf_accessor(doc, prim["indices"], bin_chunk).astype(np.int64).reshape(-1, 3)
            else:
                idx = np.arange(pos.shape[0], dtype=np.int64).reshape(-1, 3)
            pts_parts.append(pos)
            face_parts.append(idx + offset)
            offset += pos.shape[0]
        if not pts_parts:
            return
        mid = b.attach_mesh(node_id, np.concatenate(pts_parts), np.concatenate(face_parts).astype(np.uint32))
        mesh_cache[gltf_mesh_index] = mid

    def node_transform(gn: dict) -> Transform:
        if "matrix" in gn:
            m = np.array(gn["matrix"], dtype=np.float64).reshape(4, 4).T  # column-major in glTF
            scale = np.linalg.norm(m[:3, :3], axis=0)
            rot = m[:3, :3] / scale[np.newaxis, :]
            if np.linalg.det(rot) < 0:
                scale[0] *= -1
                rot = m[:3, :3] / scale[np.newaxis, :]
            return Transform(translation=m[:3, 3], rotation=quat_from_matrix(rot), scale=np.abs(scale))
        t = np.array(gn.get("translation", [0, 0, 0]), dtype=np.float64)
        r = gn.get("rotation", [0, 0, 0, 1])  # glTF stores x,y,z,w
        q = np.array([r[3], r[0], r[1], r[2]], dtype=np.float64)
        s = np.array(gn.get("scale", [1, 1, 1]), dtype=np.float64)
        return Transform(translation=t, rotation=q, scale=s)

    def style_from_extras(gn: dict) -> tuple[RenderStyle, str]:
        extras = gn.get("extras", {}) or {}
        color = extras.get("color")
        return (
            RenderStyle(
                color=tuple(color) if color else None,
                opacity=float(extras.get("opacity", 1.0)),
                occlusion_only=bool(extras.get("occlusionOnly", False)),
            ),
            str(extras.get("nodeType", "")),
        )

    def walk(gltf_index: int, parent_id: str):
        gn = doc["nodes"][gltf_index]
        style, node_type = style_from_extras(gn)
        nid = b.add_node(gn.get("name", f"node{gltf_index}"), parent=parent_id,
                         node_type=node_type, transform=node_transform(gn), style=style)
        if "mesh" in gn:
            mesh_for(gn["mesh"], nid)
        for child in gn.get("children", []):
            walk(child, nid)

    scenes = doc.get("scenes", [])
    scene_index = doc.get("scene", 0)
    roots = scenes[scene_index]["nodes"] if scenes else list(range(len(doc.get("nodes", []))))
    for r in roots:
        walk(r, b.root_id)
    return b.build(), report


def _pad_to(data: bytes, align: int, fill: bytes = b"\0") -> bytes:
    rem = (-len(data)) % align
    return data + fill * rem


def _export_gltf(model: SceneModel, binary: bool) -> bytes:
    from .scene import iter_subtree

    order = list(iter_subtree(model, model.root))
    node_index = {nid: i for i, nid in enumerate(order)}

    buffer = bytearray()
    views: list[dict] = []
    accessors: list[dict] = []
    gltf_meshes: list[dict] = []
    mesh_slot: dict[str, int] = {}

    def add_view(data: bytes, target: int) -> int:
        offset = len(buffer)
        buffer.extend(_pad_to(data, 4))
        views.append({"buffer": 0, "byteOffset": offset, "byteLength": len(data), "target": target})
        return len(views) - 1

    def add_mesh(mid: str) -> int:
        if mid in mesh_slot:
            return mesh_slot[mid]
        mesh = model.meshes[mid]
        pos = np.ascontiguousarray(mesh.positions, dtype="<f4")
        idx = np.ascontiguousarray(mesh.indices.reshape(-1), dtype="<u4")
        pv = add_view(pos.tobytes(), 34962)
        iv = add_view(idx.tobytes(), 34963)
        accessors.append(
            {
                "bufferView": pv, "componentType": 5126, "count": int(pos.shape[0]), "type": "VEC3",
                "min": [float(v) for v in pos.min(axis=0)] if pos.shape[0] else [0, 0, 0],
                "max": [float(v) for v in pos.max(axis=0)] if pos.shape[0] else [0, 0, 0],
            }
        )
        pa = len(accessors) - 1
        accessors.append({"bufferView": iv, "componentType": 5125, "count": int(idx.shape[0]), "type": "SCALAR"})
        ia = len(accessors) - 1
        gltf_meshes.append({"name": mid, "primitives": [{"attributes": {"POSITION": pa}, "indices": ia, "mode": 4}]})
        mesh_slot[mid] = len(gltf_meshes) - 1
        return mesh_slot[mid]

    gltf_nodes = []
    for nid in order:
        node = model.nodes[nid]
        t = node.local_transform
        gn: dict = {"name": node.name}
        if not np.allclose(t.translation, 0):
            gn["translation"] = [float(v) for v in t.translation]
        if abs(t.rotation[0]) < 1.0 - 1e-15:
            q = t.rotation
            gn["rotation"] = [float(q[1]), float(q[2]), float(q[3]), float(q[0])]
        if not np.allclose(t.scale, 1):
            gn["scale"] = [float(v) for v in t.scale]
        if node.children:
            gn["children"] = [node_index[c] for c in node.children]
        if node.mesh is not None:
            gn["mesh"] = add_mesh(node.mesh)
        extras = {}
        if node.node_type:
            extras["nodeType"] = node.node_type
        if node.style.color is not None:
            extras["color"] = list(node.style.color)
        if node.style.opacity != 1.0:
            extras["opacity"] = node.style.opacity
        if node.style.occlusion_only:
            extras["occlusionOnly"] = True
        if extras:
            gn["extras"] = extras
        gltf_nodes.append(gn)

    doc = {
        "asset": {"version": "2.0", "generator": "orbitcad"},
        "scene": 0,
        "scenes": [{"nodes": [node_index[model.root]]}],
        "nodes": gltf_nodes,
        "meshes": gltf_meshes,
        "accessors": accessors,
        "bufferViews": views,
        "buffers": [{"byteLength": len(buffer)}],
    }
    if binary:
        json_bytes = _pad_to(json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8"), 4, b" ")
        bin_bytes = _pad_to(bytes(buffer), 4)
        total = 12 + 8 + len(json_bytes) + 8 + len(bin_bytes)
        return (
            struct.pack("<III", _GLB_MAGIC, 2, total)
            + struct.pack("<II", len(json_bytes), 0x4E4F534A)
            + json_bytes
            + struct.pack("<II", len(bin_bytes), 0x004E4942)
            + bin_bytes
        )
    doc["buffers"][0]["uri"] = "data:application/octet-stream;base64," + base64.b64encode(bytes(buffer)).decode("ascii")
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")
