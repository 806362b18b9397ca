import numpy as np
import pytest

from conftest import cube_arrays
from orbitcad.reduction import (
    HARD_BUDGET, IDEAL_BUDGET, PlanError, apply_plan, box_cut,
    fibonacci_directions, parse_plan, plan_to_dict, select_by_name,
    select_by_size, select_by_type, select_nodes, subtree_bounds,
    visibility_cull, _tri_box_overlap,
)
from orbitcad.scene import (
    Mesh, RenderStyle, SceneError, SceneModel, SceneNode, compute_world_bounds,
    total_triangles,
)
from orbitcad.transforms import Transform, quat_from_axis_angle, quat_rotate


def nested_boxes(outer_style=None):
    pos_o, faces_o = cube_arrays(2.0)
    pos_i, faces_i = cube_arrays(0.5)
    return SceneModel(
        model_id="vis", root="r",
        nodes={
            "r": SceneNode(id="r", name="R", node_type="assembly", children=["o", "i"]),
            "o": SceneNode(id="o", name="OUTER", node_type="part", parent="r", mesh="mo",
                           style=outer_style or RenderStyle()),
            "i": SceneNode(id="i", name="INNER", node_type="part", parent="r", mesh="mi"),
        },
        meshes={"mo": Mesh(mesh_id="mo", positions=pos_o, lods=[faces_o]),
                "mi": Mesh(mesh_id="mi", positions=pos_i, lods=[faces_i])},
    )


# -------------------------------------------------------------- selectors


def test_select_by_type(assembly_model):
    assert select_by_type(assembly_model, "fastener") == {"n3", "n4"}
    assert select_by_type(assembly_model, "assembly") == set()


def test_select_by_size_thresholds(assembly_model):
    assert select_by_size(assembly_model, 0.2) == {"n3", "n4"}
    assert select_by_size(assembly_model, 2.0) == {"n2", "n3", "n4"}
    assert select_by_size(assembly_model, 100.0) == {"n1", "n2", "n3", "n4", "n5"}


def test_select_by_size_matches_bounds_oracle(assembly_model):
    # independent diagonal per node from its own world-space vertex sweep
    bounds = subtree_bounds(assembly_model)
    for nid, node in assembly_model.nodes.items():
        if node.mesh is None:
            continue
        w = np.eye(4)
        cur: str | None = nid
        chain = []
        while cur is not None:
            chain.append(cur)
            cur = assembly_model.nodes[cur].parent
        for link in reversed(chain):
            w = w @ assembly_model.nodes[link].local_transform.matrix()
        mesh = assembly_model.meshes[node.mesh]
        pts = mesh.positions @ w[:3, :3].T + w[:3, 3]
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        assert bounds[nid].diagonal == pytest.approx(diag, rel=1e-12)
        for thr in (0.01, 0.2, 1.0, 2.0, 8.0):
            assert (nid in select_by_size(assembly_model, thr)) == (diag < thr)


def test_select_by_size_uses_subtree_extent():
    # parent mesh is tiny but its child reaches far: subtree diagonal governs
    pos_s, faces_s = cube_arrays(0.1)
    model = SceneModel(
        model_id="sub", root="r",
        nodes={
            "r": SceneNode(id="r", name="R", node_type="assembly", children=["p"]),
            "p": SceneNode(id="p", name="P", node_type="part", parent="r", mesh="m",
                           children=["k"]),
            "k": SceneNode(id="k", name="K", node_type="part", parent="p", mesh="m",
                           local_transform=Transform.from_translation(np.array([10.0, 0.0, 0.0]))),
        },
        meshes={"m": Mesh(mesh_id="m", positions=pos_s, lods=[faces_s])},
    )
    assert "k" in select_by_size(model, 1.0)
    assert "p" not in select_by_size(model, 1.0)
    assert "p" in select_by_size(model, 100.0)


def test_select_by_name(assembly_model):
    assert select_by_name(assembly_model, "BRKT") == {"n2"}
    assert select_by_name(assembly_model, "PANEL") == {"n1", "n5"}
    assert select_by_name(assembly_model, r"^BOLT_\d$", is_regex=True) == {"n3", "n4"}
    with pytest.raises(PlanError):
        select_by_name(assembly_model, "[", is_regex=True)


def test_select_nodes_dispatch(assembly_model):
    assert select_nodes(assembly_model, {"kind": "by_type", "node_type": "fastener"}) \
        == {"n3", "n4"}
    assert select_nodes(assembly_model, {"kind": "by_name", "pattern": "PANEL_A"}) == {"n1"}
    assert select_nodes(assembly_model, {"kind": "by_size", "threshold": 0.2}) == {"n3", "n4"}
    with pytest.raises(PlanError):
        select_nodes(assembly_model, {"kind": "wat"})


# ----------------------------------------------------------- plan parsing


def test_parse_plan_defaults_and_round_trip(assembly_model):
    doc = {"model_id": "asm", "steps": [
        {"kind": "remove_by_type", "node_type": "fastener"},
        {"kind": "set_opacity", "ids": ["n1"], "value": 0.25},
    ]}
    plan = parse_plan(doc)
    assert plan.ideal_budget == IDEAL_BUDGET
    assert plan.hard_budget == HARD_BUDGET
    again = parse_plan(plan_to_dict(plan))
    assert again == plan


@pytest.mark.parametrize("doc,match", [
    ({"steps": [{"kind": "warp"}]}, "step 0"),
    ({"steps": [{"kind": "remove_by_size", "threshold": "big"}]}, "threshold"),
    ({"steps": [{"kind": "remove_by_name"}]}, "pattern"),
    ({"steps": [{"kind": "box_cut", "box": {"min": [0, 0, 0]}, "mode": "keep"}]}, "box"),
    ({"steps": [{"kind": "box_cut", "box": {"min": [0, 0, 0], "max": [1, 1, 1]},
                 "mode": "trim"}]}, "mode"),
    ({"steps": [{"kind": "set_color", "ids": ["a"], "rgb": [1, 0]}]}, "rgb"),
    ({"steps": [{"kind": "visibility_cull", "center": [0, 0, 0], "radius": 1.0,
                 "camera_count": 2}]}, "camera_count"),
    ({"steps": [], "ideal_budget": 10, "hard_budget": 5}, "exceeds"),
    ({"steps": [], "ideal_budget": 0}, "positive"),
], ids=["kind", "threshold", "pattern", "box", "mode", "rgb", "cams", "budgets", "ideal0"])
def test_parse_plan_rejects(doc, match):
    with pytest.raises(PlanError, match=match):
        parse_plan(doc)


# --------------------------------------------------------------- apply


def test_apply_plan_accounting(assembly_model):
    plan = parse_plan({
        "model_id": "asm", "ideal_budget": 100, "hard_budget": 200,
        "steps": [
            {"kind": "remove_by_type", "node_type": "fastener"},
            {"kind": "remove_by_name", "pattern": "BRKT"},
            {"kind": "remove_by_size", "threshold": 0.2},
        ]})
    out, report = apply_plan(assembly_model, plan)
    assert report.initial_triangles == 60
    assert report.final_triangles == 24
    assert [s.removed for s in report.steps] == [["n3", "n4"], ["n2"], []]
    assert [s.index for s in report.steps] == [0, 1, 2]
    assert report.initial_triangles - sum(s.triangle_delta for s in report.steps) \
        == report.final_triangles
    assert report.verdict == "under_ideal"
    assert total_triangles(out) == 24
    # source model untouched
    assert total_triangles(assembly_model) == 60
    assert set(assembly_model.nodes) == {"n0", "n1", "n2", "n3", "n4", "n5"}


def test_verdict_boundaries(assembly_model):
    def verdict(ideal, hard):
        plan = parse_plan({"model_id": "asm", "ideal_budget": ideal,
                           "hard_budget": hard, "steps": []})
        return apply_plan(assembly_model, plan)[1].verdict

    assert verdict(60, 100) == "under_ideal"   # exactly at ideal counts
    assert verdict(59, 60) == "under_hard"     # exactly at hard counts
    assert verdict(10, 59) == "over"


def test_remove_unknown_ids_names_the_step(assembly_model):
    plan = parse_plan({"model_id": "asm", "steps": [
        {"kind": "remove_by_type", "node_type": "fastener"},
        {"kind": "remove_nodes", "ids": ["zz"]},
    ]})
    with pytest.raises(PlanError, match=r"step 1"):
        apply_plan(assembly_model, plan)


def test_remove_nodes_takes_subtree():
    pos, faces = cube_arrays(0.5)
    model = SceneModel(
        model_id="t", root="r",
        nodes={
            "r": SceneNode(id="r", name="R", node_type="assembly", children=["a"]),
            "a": SceneNode(id="a", name="A", node_type="part", parent="r", mesh="m",
                           children=["b"]),
            "b": SceneNode(id="b", name="B", node_type="part", parent="a", mesh="m"),
        },
        meshes={"m": Mesh(mesh_id="m", positions=pos, lods=[faces])},
    )
    plan = parse_plan({"model_id": "t", "steps": [{"kind": "remove_nodes", "ids": ["a"]}]})
    out, report = apply_plan(model, plan)
    assert set(out.nodes) == {"r"}
    # the report names the selection; the delta shows the subtree went too
    assert report.steps[0].removed == ["a"]
    assert report.steps[0].triangle_delta == 24


def test_style_steps_apply(assembly_model):
    plan = parse_plan({"model_id": "asm", "steps": [
        {"kind": "set_color", "ids": ["n1"], "rgb": [1, 0, 0]},
        {"kind": "set_opacity", "ids": ["n5"], "value": 0.5},
        {"kind": "set_occlusion_only", "ids": ["n2"], "flag": True},
    ]})
    out, report = apply_plan(assembly_model, plan)
    assert out.nodes["n1"].style.color == (1.0, 0.0, 0.0)
    assert out.nodes["n5"].style.opacity == 0.5
    assert out.nodes["n2"].style.occlusion_only is True
    assert report.final_triangles == 60
    assert all(s.triangle_delta == 0 for s in report.steps)
    # style steps never copy onto the input model
    assert assembly_model.nodes["n1"].style.color is None


# ------------------------------------------------------- triangle/box SAT


def tri(*pts):
    return np.array([pts], dtype=np.float64)


HALF = np.array([1.0, 1.0, 1.0])


@pytest.mark.parametrize("t,expect", [
    (tri((0.1, 0.1, 0.1), (0.2, 0.1, 0.1), (0.1, 0.2, 0.1)), True),    # fully inside
    (tri((-3, -3, 0), (3, -3, 0), (0, 3, 0)), True),                   # box inside tri
    (tri((2, 0, 0), (3, 0, 0), (2, 1, 0)), False),                     # beyond +x face
    (tri((0, 0, 1.5), (1, 0, 1.5), (0, 1, 1.5)), False),               # above +z face
    (tri((0.5, 0, 0), (1.5, 0, 0), (0.5, 1, 0)), True),                # crosses +x face
    (tri((1, 1, 1), (2, 1, 1), (1, 2, 1)), True),                      # touches corner
    (tri((3.1, 0, 0), (0, 3.1, 0), (0, 0, 3.1)), False),               # plane axis separates
    (tri((3.0, 0, 0), (0, 3.0, 0), (0, 0, 3.0)), True),                # plane touches corner
    # z-slab sliver past the box edge: only an edge-cross axis separates it
    (tri((2.2, 0, 0.5), (0, 2.2, 0.5), (2.2, 2.2, 0.5)), False),
    (tri((1.9, 0, 0.5), (0, 1.9, 0.5), (1.9, 1.9, 0.5)), True),
    (tri((5, 0, 0), (6, 0, 0), (7, 0, 0)), False),                     # degenerate, outside
    (tri((0, 0, 0), (0.5, 0, 0), (1.5, 0, 0)), True),                  # degenerate, crossing
])
def test_tri_box_overlap_cases(t, expect):
    assert bool(_tri_box_overlap(t, HALF)[0]) is expect


@pytest.mark.parametrize("seed", range(6))
def test_tri_box_overlap_point_witness(seed):
    # any barycentric sample landing in the box proves overlap; the SAT
    # result must never contradict such a witness
    rng = np.random.default_rng(seed)
    tris = rng.uniform(-2.0, 2.0, size=(200, 3, 3))
    overlap = _tri_box_overlap(tris, HALF)
    k = 24
    u = np.linspace(0.0, 1.0, k)
    bary = np.array([[a, b, 1.0 - a - b] for a in u for b in u if a + b <= 1.0])
    pts = np.einsum("sk,mkd->msd", bary, tris)
    witness = np.all(np.abs(pts) <= HALF + 1e-12, axis=2).any(axis=1)
    assert not np.any(witness & ~overlap)


# ----------------------------------------------------------------- box_cut


def test_box_cut_keep_vs_cut_partition(assembly_model):
    lo, hi = [-2.9, -3.5, -3.0], [2.9, 3.6, 3.0]
    kept = box_cut(assembly_model, lo, hi, mode="keep")
    cut = box_cut(assembly_model, lo, hi, mode="cut")
    names_kept = {kept.nodes[n].name for n in kept.nodes if kept.nodes[n].mesh}
    names_cut = {cut.nodes[n].name for n in cut.nodes if cut.nodes[n].mesh}
    assert "PANEL_B" not in names_kept
    assert names_cut == {"PANEL_B"}
    # whole-triangle cuts: the two halves cover the model, overlapping on
    # triangles that straddle the boundary
    assert total_triangles(kept) + total_triangles(cut) >= 60
    for model in (kept, cut):
        model.validate() if hasattr(model, "validate") else None


def test_box_cut_changed_meshes_get_fresh_ids(assembly_model):
    out = box_cut(assembly_model, [-0.5, -4.0, -4.0], [7.5, 4.0, 4.0], mode="keep")
    # PANEL_A straddles the x=-0.5 plane: its mesh was rewritten
    panel_a = out.nodes["n1"]
    assert panel_a.mesh != "mesh-n1"
    assert panel_a.mesh in out.meshes
    assert out.meshes[panel_a.mesh].lod_count == 1
    # PANEL_B sits entirely inside: keeps its original mesh object
    assert out.nodes["n5"].mesh == "mesh-n5"


def test_box_cut_rotation_equivariance():
    rng = np.random.default_rng(11)
    pos = rng.uniform(-2.0, 2.0, size=(90, 3))
    faces = np.arange(90, dtype=np.uint32).reshape(30, 3)
    q = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.53)
    pos_unrot = quat_rotate(np.array([q[0], -q[1], -q[2], -q[3]]), pos)

    def model_of(p):
        return SceneModel(
            model_id="e", root="r",
            nodes={"r": SceneNode(id="r", name="R", node_type="assembly", children=["a"]),
                   "a": SceneNode(id="a", name="A", node_type="part", parent="r", mesh="m")},
            meshes={"m": Mesh(mesh_id="m", positions=p, lods=[faces])})

    lo, hi = [-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]
    rotated_box = box_cut(model_of(pos), lo, hi, rotation=tuple(q), mode="keep")
    aligned_box = box_cut(model_of(pos_unrot), lo, hi, mode="keep")
    assert total_triangles(rotated_box) == total_triangles(aligned_box)


def test_box_cut_rejects_bad_box(assembly_model):
    with pytest.raises(PlanError):
        box_cut(assembly_model, [1.0, 0.0, 0.0], [0.0, 1.0, 1.0])
    with pytest.raises(PlanError):
        box_cut(assembly_model, [0.0] * 3, [1.0] * 3, mode="slice")


def test_box_cut_interior_node_loses_mesh_leaf_removed():
    pos, faces = cube_arrays(0.5)
    far = Transform.from_translation(np.array([20.0, 0.0, 0.0]))
    model = SceneModel(
        model_id="t", root="r",
        nodes={
            "r": SceneNode(id="r", name="R", node_type="assembly", children=["p"]),
            "p": SceneNode(id="p", name="P", node_type="part", parent="r", mesh="m",
                           local_transform=far, children=["k"]),
            "k": SceneNode(id="k", name="K", node_type="part", parent="p", mesh="m",
                           local_transform=Transform.from_translation(np.array([-20.0, 0.0, 0.0]))),
        },
        meshes={"m": Mesh(mesh_id="m", positions=pos, lods=[faces])},
    )
    # box around the origin: keeps only k (which sits at world origin)
    out = box_cut(model, [-1.0] * 3, [1.0] * 3, mode="keep")
    assert out.nodes["p"].mesh is None  # interior node emptied, kept for k
    assert out.nodes["k"].mesh is not None
    assert total_triangles(out) == 12


# --------------------------------------------------------- visibility cull


def test_visibility_cull_drops_enclosed():
    model = nested_boxes()
    kept = visibility_cull(model, center=np.zeros(3), radius=8.0, camera_count=32)
    assert "o" in kept
    assert "i" not in kept


def test_visibility_cull_translucent_shell_hides_nothing():
    model = nested_boxes(outer_style=RenderStyle(opacity=0.5))
    kept = visibility_cull(model, center=np.zeros(3), radius=8.0, camera_count=32)
    assert kept == {"o", "i"}


def test_visibility_cull_radius_must_enclose():
    model = nested_boxes()
    with pytest.raises(SceneError, match="enclose"):
        visibility_cull(model, center=np.zeros(3), radius=1.0, camera_count=16)
    with pytest.raises(SceneError, match="camera_count"):
        visibility_cull(model, center=np.zeros(3), radius=8.0, camera_count=3)


def test_visibility_cull_explicit_directions():
    model = nested_boxes()
    dirs = fibonacci_directions(16)
    kept = visibility_cull(model, center=np.zeros(3), radius=8.0, camera_count=16,
                           directions=dirs)
    assert "o" in kept
    with pytest.raises(SceneError, match="length"):
        visibility_cull(model, center=np.zeros(3), radius=8.0, camera_count=8,
                        directions=dirs)


def test_visibility_plan_step_removes_enclosed():
    model = nested_boxes()
    plan = parse_plan({"model_id": "vis", "steps": [
        {"kind": "visibility_cull", "center": [0, 0, 0], "radius": 8.0,
         "camera_count": 32}]})
    out, report = apply_plan(model, plan)
    assert "i" not in out.nodes
    assert "o" in out.nodes
    assert report.steps[0].removed == ["i"]
    assert report.steps[0].triangle_delta == 12


def test_fibonacci_directions_cover_sphere():
    dirs = fibonacci_directions(64)
    assert dirs.shape == (64, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    # roughly balanced hemispheres and no duplicate directions
    assert abs(int((dirs[:, 2] > 0).sum()) - 32) <= 1
    assert len({tuple(np.round(d, 9)) for d in dirs}) == 64
