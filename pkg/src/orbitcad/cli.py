"""Operator command line.

Works directly against a data directory (the same layout the server
uses), so models can be ingested, reduced, exported and rendered without
a running service. ``serve`` starts the service; ``simulate`` runs the
scripted multi-client convergence harness against a live in-process
server.

Every command exits 0 on success. With ``--json``, results and errors are
single JSON documents on stdout, errors shaped
``{"error": {"code", "message"}}`` with a nonzero exit.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import meshio, modelstore
from .lods import generate_lods
from .png import encode_png
from .reduction import PlanError, apply_plan, parse_plan
from .renderer import sheet_grid, sprite_sheet
from .scene import SceneError, total_triangles

DEFAULT_BIND = "127.0.0.1:8023"


def _emit(ctx_obj: dict, doc: dict, text: str) -> None:
    if ctx_obj["json"]:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        click.echo(text)


def _fail(ctx_obj: dict, code: str, message: str) -> None:
    if ctx_obj["json"]:
        click.echo(json.dumps({"error": {"code": code, "message": message}}))
    else:
        click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _handled(fn):
    # uniform error reporting for everything below the argument parser
    @functools.wraps(fn)
    @click.pass_obj
    def wrapper(obj, *args, **kwargs):
        try:
            fn(obj, *args, **kwargs)
        except (meshio.ParseError, SceneError, PlanError) as exc:
            _fail(obj, type(exc).__name__.lower().replace("error", "_error"), str(exc))
        except KeyError as exc:
            _fail(obj, "not_found", str(exc.args[0]) if exc.args else str(exc))
        except (OSError, ValueError) as exc:
            _fail(obj, "error", str(exc))
    return wrapper


@click.group()
@click.option("--data-dir", envvar="ORBITCAD_DATA_DIR", default="orbitcad-data",
              type=click.Path(path_type=Path), show_default=True,
              help="Model and session storage directory.")
@click.option("--json", "json_out", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cli(ctx, data_dir: Path, json_out: bool):
    """Collaborative CAD review toolkit."""
    ctx.obj = {"data_dir": data_dir, "json": json_out}


@cli.command("import")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "fmt", type=click.Choice(sorted(meshio.FORMATS)), default=None,
              help="Input format; defaults to the file suffix.")
@click.option("--unit-scale", type=float, default=1.0, show_default=True,
              help="Meters per model unit (0.001 for millimeter sources).")
@click.option("--name", default=None, help="Display name; defaults to the file stem.")
@_handled
def cmd_import(obj, path: Path, fmt: str | None, unit_scale: float, name: str | None):
    """Ingest a CAD file into the data directory."""
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in meshio.FORMATS:
        raise meshio.ParseError(f"cannot infer format from {path.name!r}; use --format")
    if unit_scale <= 0:
        raise ValueError("--unit-scale must be positive")
    model, report = meshio.import_model(path.read_bytes(), fmt, model_id=path.stem,
                                        unit_scale=unit_scale)
    record = modelstore.register(obj["data_dir"], model, name=name or path.stem, fmt=fmt,
                                 triangles=report.triangle_count, nodes=report.node_count)
    doc = {"model_id": record["model_id"], "nodes": report.node_count,
           "triangles": report.triangle_count, "warnings": report.warnings}
    _emit(obj, doc, f"{record['model_id']}: {report.node_count} nodes, "
                    f"{report.triangle_count} triangles")
    for w in report.warnings:
        if not obj["json"]:
            click.echo(f"warning: {w}", err=True)


@cli.command("export")
@click.argument("model_id")
@click.option("--format", "fmt", type=click.Choice(sorted(meshio.FORMATS)), default=None)
@click.option("-o", "--output", type=click.Path(path_type=Path), required=True)
@_handled
def cmd_export(obj, model_id: str, fmt: str | None, output: Path):
    """Write a stored model back out as OBJ/STL/PLY/glTF."""
    fmt = fmt or output.suffix.lstrip(".").lower()
    if fmt not in meshio.FORMATS:
        raise meshio.ParseError(f"cannot infer format from {output.name!r}; use --format")
    model = modelstore.load(obj["data_dir"], model_id)
    data = meshio.export_model(model, fmt)
    output.write_bytes(data)
    _emit(obj, {"model_id": model_id, "format": fmt, "path": str(output),
                "bytes": len(data)},
          f"wrote {output} ({len(data)} bytes)")


@cli.command("reduce")
@click.argument("model_id")
@click.argument("plan_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--dry-run", is_flag=True, help="Report only; write nothing.")
@click.option("--output-id", default=None, help="Id for the reduced model.")
@click.option("--lods", default=None,
              help="Comma-separated detail ratios (e.g. 0.5,0.2) generated per mesh "
                   "after the plan runs.")
@_handled
def cmd_reduce(obj, model_id: str, plan_path: Path, dry_run: bool,
               output_id: str | None, lods: str | None):
    """Apply a reduction plan to a stored model."""
    doc = json.loads(plan_path.read_text())
    plan = parse_plan({**doc, "model_id": model_id})
    model = modelstore.load(obj["data_dir"], model_id)
    reduced, report = apply_plan(model, plan)
    lod_counts = None
    if lods is not None:
        try:
            ratios = [float(r) for r in lods.split(",") if r.strip()]
        except ValueError:
            raise ValueError(f"bad --lods value {lods!r}") from None
        reduced.meshes = {mid: generate_lods(mesh, ratios)
                          for mid, mesh in reduced.meshes.items()}
        lod_counts = []
        for level in range(1 + len(ratios)):
            per_node = {nid: min(level, reduced.meshes[node.mesh].lod_count - 1)
                        for nid, node in reduced.nodes.items() if node.mesh is not None}
            lod_counts.append(total_triangles(reduced, lod_levels=per_node))
    out = {"model_id": model_id, "report": report.to_dict(), "reduced_model_id": None,
           "lod_triangles": lod_counts}
    lines = [f"initial: {report.initial_triangles} triangles",
             f"final:   {report.final_triangles} triangles",
             f"verdict: {report.verdict}"]
    for step in report.steps:
        lines.append(f"  step {step.index} {step.kind}: "
                     f"-{step.triangle_delta} triangles, {len(step.removed)} nodes removed")
    if lod_counts:
        lines.append("lod triangle counts: " + ", ".join(str(c) for c in lod_counts))
    if not dry_run:
        index = modelstore.read_index(obj["data_dir"])
        base = index.get(model_id, {"name": model_id, "project_id": "default"})
        mid = output_id
        if mid is None:
            n = 1
            while f"{model_id}-r{n}" in index:
                n += 1
            mid = f"{model_id}-r{n}"
        record = modelstore.register(
            obj["data_dir"], reduced, name=f"{base['name']} (reduced)", fmt="ocsm",
            triangles=report.final_triangles, nodes=len(reduced.nodes),
            project_id=base["project_id"], model_id=mid)
        out["reduced_model_id"] = record["model_id"]
        lines.append(f"wrote reduced model {record['model_id']}")
    _emit(obj, out, "\n".join(lines))


@cli.command("thumbs")
@click.argument("model_id")
@click.option("--viewpoints", type=int, default=24, show_default=True)
@click.option("-o", "--output", type=click.Path(path_type=Path), default=None,
              help="Defaults to {model_id}-sheet.png.")
@click.option("--tile", type=int, default=256, show_default=True)
@_handled
def cmd_thumbs(obj, model_id: str, viewpoints: int, output: Path | None, tile: int):
    """Render an orbit sprite sheet for a stored model."""
    if viewpoints < 1:
        raise ValueError("--viewpoints must be at least 1")
    model = modelstore.load(obj["data_dir"], model_id)
    sheet = sprite_sheet(model, viewpoint_count=viewpoints, tile=tile)
    out = output or Path(f"{model_id}-sheet.png")
    out.write_bytes(encode_png(sheet))
    cols, rows = sheet_grid(viewpoints)
    _emit(obj, {"model_id": model_id, "path": str(out), "viewpoints": viewpoints,
                "grid": [cols, rows], "tile": tile},
          f"wrote {out}: {cols}x{rows} grid, {viewpoints} viewpoints")


@cli.command("layout-svg")
@click.option("--tag-size", type=float, default=0.08, show_default=True,
              help="Tag edge length in meters.")
@click.option("--spacing", type=float, default=0.02, show_default=True,
              help="Gap between tags in meters.")
@click.option("-o", "--output", type=click.Path(path_type=Path),
              default=Path("marker-layout.svg"), show_default=True)
@_handled
def cmd_layout_svg(obj, tag_size: float, spacing: float, output: Path):
    """Write the printable alignment-marker page."""
    from .alignment import AlignmentError, build_tag_layout, layout_svg
    try:
        layout = build_tag_layout(tag_size, spacing)
    except AlignmentError as exc:
        raise ValueError(str(exc)) from None
    output.write_text(layout_svg(layout))
    _emit(obj, {"path": str(output), "tag_size": tag_size, "spacing": spacing,
                "points": len(layout.points)},
          f"wrote {output}: 4 tags, {len(layout.points)} reference points")


@cli.command("serve")
@click.option("--bind", envvar="ORBITCAD_BIND", default=DEFAULT_BIND, show_default=True)
@click.option("--flush-secs", envvar="ORBITCAD_FLUSH_SECS", type=float, default=30.0,
              show_default=True, help="Idle-compaction interval.")
@_handled
def cmd_serve(obj, bind: str, flush_secs: float):
    """Run the collaboration server."""
    from .broker.app import main_serve
    main_serve(obj["data_dir"], bind, flush_secs)


@cli.command("simulate")
@click.option("--clients", type=int, default=20, show_default=True)
@click.option("--ops", "ops_per_client", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_handled
def cmd_simulate(obj, clients: int, ops_per_client: int, seed: int):
    """Run the scripted multi-client convergence harness."""
    if clients < 1 or ops_per_client < 1:
        raise ValueError("--clients and --ops must be at least 1")
    from .simulate import simulate
    report = simulate(obj["data_dir"], clients=clients, ops_per_client=ops_per_client,
                      seed=seed)
    text = [f"clients: {clients}, ops/client: {ops_per_client}, seed: {seed}",
            f"final head: {report['head']}",
            f"rejoined client: {report['rejoined_client']}",
            f"server hash: {report['server_hash']}",
            f"recovered hash: {report['recovered_hash']}",
            f"elapsed: {report['elapsed_secs']}s",
            f"converged: {'true' if report['converged'] else 'false'}"]
    _emit(obj, report, "\n".join(text))
    if not report["converged"]:
        sys.exit(1)


main = cli

if __name__ == "__main__":
    main()
