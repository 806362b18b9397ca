#!/usr/bin/env python3
"""Build a small synthetic spacecraft-ish assembly, run a reduction plan
against it, and print the per-step accounting a reviewer would see.

    python3 scripts/reduction_demo.py [--ideal 15000] [--hard 20000]
"""

import argparse
import random

import numpy as np

from orbitcad.reduction import apply_plan, parse_plan
from orbitcad.scene import Mesh, SceneModel, SceneNode, total_triangles
from orbitcad.transforms import Transform


def box_mesh(mid, half, reps):
    pos = np.array([[sx * half, sy * half, sz * half]
                    for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)],
                   dtype=np.float64)
    faces = np.array([[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
                      [0, 1, 4], [1, 5, 4], [1, 3, 5], [3, 7, 5],
                      [3, 2, 7], [2, 6, 7], [2, 0, 6], [0, 4, 6]],
                     dtype=np.uint32)
    return Mesh(mesh_id=mid, positions=np.tile(pos, (reps, 1)),
                lods=[np.vstack([faces + 8 * r for r in range(reps)])])


def build_demo_model(seed):
    rng = random.Random(seed)
    meshes = {
        "hull": box_mesh("hull", 1.2, 400),
        "panel": box_mesh("panel", 0.5, 120),
        "bolt": box_mesh("bolt", 0.004, 2),
        "clamp": box_mesh("clamp", 0.02, 6),
        "strut": box_mesh("strut", 0.15, 30),
    }
    nodes = {"root": SceneNode(id="root", name="DEMO CRAFT", node_type="assembly",
                               children=["bus", "array0", "array1"])}
    nodes["bus"] = SceneNode(id="bus", name="BUS", node_type="assembly",
                             parent="root", children=[])
    serial = 0

    def part(parent, name, kind, mesh, offset):
        nonlocal serial
        serial += 1
        nid = f"d{serial:03d}"
        nodes[nid] = SceneNode(id=nid, name=f"{name}_{serial:03d}", node_type=kind,
                               parent=parent, mesh=mesh, children=[],
                               local_transform=Transform.from_translation(np.array(offset)))
        nodes[parent].children.append(nid)
        return nid

    part("bus", "HULL", "structure", "hull", [0.0, 0.0, 0.0])
    for _ in range(3):
        part("bus", "STRUT", "bracket", "strut",
             [rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0])
    for _ in range(40):
        part("bus", "BOLT", "fastener", "bolt",
             [rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)])
    for i in (0, 1):
        wing = f"array{i}"
        nodes[wing] = SceneNode(id=wing, name=f"ARRAY {i}", node_type="assembly",
                                parent="root", children=[],
                                local_transform=Transform.from_translation(
                                    np.array([0.0, (2.2 if i else -2.2), 0.0])))
        for j in range(3):
            pid = part(wing, "PANEL", "part", "panel", [0.0, (j + 1) * 1.1, 0.0])
            for _ in range(6):
                part(pid, "CLAMP", "fastener", "clamp",
                     [rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.05])
    return SceneModel(model_id="demo", root="root", nodes=nodes, meshes=meshes)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ideal", type=int, default=15_000)
    ap.add_argument("--hard", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    model = build_demo_model(args.seed)
    print(f"model {model.model_id!r}: {len(model.nodes)} nodes, "
          f"{total_triangles(model)} triangles")

    plan = parse_plan({
        "model_id": model.model_id,
        "ideal_budget": args.ideal,
        "hard_budget": args.hard,
        "steps": [
            {"kind": "remove_by_size", "threshold": 0.05},
            {"kind": "remove_by_name", "pattern": "CLAMP"},
            {"kind": "remove_by_type", "node_type": "bracket"},
            {"kind": "set_color", "ids": ["d001"], "rgb": [1.0, 0.67, 0.0]},
        ],
    })
    reduced, report = apply_plan(model, plan)

    for step in report.steps:
        tag = f"{len(step.removed)} removed" if step.removed else "style only"
        print(f"  step {step.index} {step.kind:<16} {tag:<14} "
              f"dropped {step.triangle_delta} triangles")
    print(f"{report.initial_triangles} -> {report.final_triangles} triangles, "
          f"verdict {report.verdict} "
          f"(ideal {plan.ideal_budget}, hard {plan.hard_budget})")
    print(f"reduced model keeps {len(reduced.nodes)} nodes, "
          f"{len(reduced.meshes)} meshes")


if __name__ == "__main__":
    main()
