import numpy as np
import pytest

from orbitcad.scene import Mesh, SceneModel, SceneNode
from orbitcad.transforms import Transform


def cube_arrays(half=1.0):
    """Axis-aligned cube, 8 vertices (index = x + 2y + 4z), 12 triangles,
    outward winding."""
    pos = []
    for z in (-half, half):
        for y in (-half, half):
            for x in (-half, half):
                pos.append([x, y, z])
    pos = np.array(pos, dtype=np.float64)
    faces = np.array([
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4], [1, 3, 5], [3, 7, 5],
        [3, 2, 7], [2, 6, 7], [2, 0, 6], [0, 4, 6],
    ], dtype=np.uint32)
    return pos, faces


def sphere_arrays(rings=16, segs=20, radius=1.0):
    lat = np.linspace(0.0, np.pi, rings + 1)
    lon = np.linspace(0.0, 2 * np.pi, segs, endpoint=False)
    verts = []
    for t in lat:
        for p in lon:
            verts.append([radius * np.sin(t) * np.cos(p),
                          radius * np.sin(t) * np.sin(p),
                          radius * np.cos(t)])
    verts = np.array(verts)
    faces = []
    for i in range(rings):
        for j in range(segs):
            a = i * segs + j
            b = i * segs + (j + 1) % segs
            c = a + segs
            d = b + segs
            faces.append([a, c, b])
            faces.append([b, c, d])
    faces = np.array(faces, dtype=np.uint32)
    # collapse duplicate pole vertices and drop the degenerate faces
    verts_r = np.round(verts, 9)
    uniq, inverse = np.unique(verts_r, axis=0, return_inverse=True)
    faces = inverse[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return np.asarray(uniq, dtype=np.float64), np.asarray(faces[keep], dtype=np.uint32)


@pytest.fixture
def cube_model():
    pos, faces = cube_arrays()
    return SceneModel(
        model_id="cube", root="root",
        nodes={
            "root": SceneNode(id="root", name="ROOT", node_type="assembly", children=["c"]),
            "c": SceneNode(id="c", name="CUBE", node_type="part", parent="root", mesh="m0"),
        },
        meshes={"m0": Mesh(mesh_id="m0", positions=pos, lods=[faces])},
    )


@pytest.fixture
def assembly_model():
    """Five cube parts under one root: two large panels, a bracket, two
    small fasteners. Sized so the selectors split them cleanly."""
    nodes = {"n0": SceneNode(id="n0", name="ROOT", node_type="assembly",
                             children=["n1", "n5", "n2", "n3", "n4"])}
    meshes = {}
    specs = [
        ("n1", "PANEL_A", "part", 2.0, (0.0, 0.0, 0.0)),
        ("n5", "PANEL_B", "part", 2.0, (5.0, 0.0, 0.0)),
        ("n2", "BRKT_1", "part", 0.5, (0.0, 3.0, 0.0)),
        ("n3", "BOLT_1", "fastener", 0.05, (1.0, 1.0, 0.0)),
        ("n4", "BOLT_2", "fastener", 0.05, (-1.0, 1.0, 0.0)),
    ]
    for nid, name, ntype, half, off in specs:
        pos, faces = cube_arrays(half)
        mid = f"mesh-{nid}"
        meshes[mid] = Mesh(mesh_id=mid, positions=pos, lods=[faces])
        nodes[nid] = SceneNode(
            id=nid, name=name, node_type=ntype, parent="n0", mesh=mid,
            local_transform=Transform.from_translation(np.array(off)))
    return SceneModel(model_id="asm", root="n0", nodes=nodes, meshes=meshes)


@pytest.fixture
def sphere_mesh():
    pos, faces = sphere_arrays()
    return Mesh(mesh_id="sph", positions=pos, lods=[faces])
