"""
CLI interface for airway-gvf.
"""

import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import click
import numpy as np
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.status import Status
from rich.table import Table

from airway_gvf.config import Config, load_config
from airway_gvf.errors import AirwayError, ConfigError
from airway_gvf.evaluate import Metrics, evaluate, report
from airway_gvf.metaimage import load_mask, load_volume, save_volume
from airway_gvf.phantom import PhantomSpec, generate_phantom, load_ground_truth, load_phantom_spec, save_ground_truth
from airway_gvf.tracer import analyse_voi, trace
from airway_gvf.utils import format_mm, format_point, parse_float_list, parse_index, setup_logging
from airway_gvf.voi import Voi, complete_frame, unit_vector

console = Console()
err_console = Console(stderr=True)

EXIT_FAILURE = 1
EXIT_MISSING_FILE = 2
EXIT_CONFIG = 3

DUMP_KINDS = ("cef", "gvf", "tubeness", "centerline")


def _config_epilog() -> str:
    lines = ["\b", "Configuration keys (default):"]
    lines += [f"  {key} = {default}" for key, default in Config.defaults_table()]
    return "\n".join(lines)


def _fail(message: str, code: int) -> None:
    err_console.print(f"[red]error:[/red] {escape(message)}")
    sys.exit(code)


@contextmanager
def _diagnostics():
    """Map library errors to exit codes with a one-line message."""
    try:
        yield
    except FileNotFoundError as e:
        message = str(e)
        if not message.startswith("file not found"):
            message = f"file not found: {e.filename}"
        _fail(message, EXIT_MISSING_FILE)
    except ConfigError as e:
        _fail(f"config {e}", EXIT_CONFIG)
    except AirwayError as e:
        _fail(str(e), EXIT_FAILURE)


def _parse_voi(text: str) -> Voi:
    try:
        values = parse_float_list(text)
    except ValueError:
        values = []
    if len(values) != 8:
        raise click.BadParameter(f"expected bx,by,bz,ax,ay,az,cs,len, got {text!r}")
    axis = unit_vector(values[3:6])
    return Voi(
        base=tuple(values[0:3]),
        axis=tuple(axis),
        up=complete_frame(axis),
        cross_size=values[6],
        length=values[7],
    )


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log per-VOI details")
def main(verbose: bool):
    """airway-gvf: airway tree tracing in 3-D chest CT."""
    setup_logging(verbose)


@main.command(epilog=_config_epilog())
@click.option("--volume", "volume_path", required=True, type=click.Path(), help="Input CT volume (.mhd/.mha)")
@click.option("--seed", required=True, help="Seed voxel index in the trachea, X,Y,Z")
@click.option("--config", "config_path", default=None, type=click.Path(), help="key=value configuration file")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory")
@click.option(
    "--threads", type=click.IntRange(min=1), default=None, envvar="AIRWAY_THREADS",
    help="Worker threads per VOI wave",
)
def segment(volume_path: str, seed: str, config_path: Optional[str], out_dir: str, threads: Optional[int]):
    """Trace the airway tree reachable from SEED."""
    with _diagnostics():
        try:
            seed_index = parse_index(seed)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--seed") from e
        config = load_config(config_path)
        if threads is not None:
            config = config.with_threads(threads)
        volume = load_volume(volume_path)

        with Status("Tracing airway tree...", console=console, spinner="dots"):
            tree = trace(volume, seed_index, config)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_volume(tree.mask, out / "mask.mhd")
        tree.save(out / "tree.json")
        summary = {
            "seed": list(seed_index),
            "branches": tree.branch_count,
            "status": tree.status_counts(),
            "voxel_count": tree.voxel_count,
            "truncated": tree.truncated,
        }
        _write_json(out / "summary.json", summary)

    counts = tree.status_counts()
    console.print(Panel(
        f"[green]Branches:[/green] {tree.branch_count} "
        f"([dim]terminated {counts['terminated']}, leaked {counts['leaked']}, open {counts['open']}[/dim])\n"
        f"[dim]Voxels:[/dim] {tree.voxel_count}\n"
        f"[dim]Output:[/dim] {out}"
        + ("\n[yellow]Trace truncated by a configured limit[/yellow]" if tree.truncated else ""),
        title="[bold blue]airway-gvf[/bold blue]",
        border_style="green",
    ))


@main.command()
@click.option("--spec", "spec_path", default=None, type=click.Path(), help="key=value phantom spec")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory")
def phantom(spec_path: Optional[str], out_dir: str):
    """Render a synthetic airway phantom and its ground truth."""
    with _diagnostics():
        spec = load_phantom_spec(spec_path) if spec_path else PhantomSpec()
        volume, truth = generate_phantom(spec)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_volume(volume, out / "volume.mhd")
        save_ground_truth(truth, out)

    seed = np.floor(volume.geometry.world_to_index((0.0, 0.0, -2.0 * spec.pitch)) + 0.5).astype(int)
    console.print(Panel(
        f"[green]Created:[/green] {out / 'volume.mhd'}\n"
        f"[dim]Branches:[/dim] {truth.tree.branch_count}\n"
        f"[dim]Dims:[/dim] {volume.dims}\n"
        f"[dim]Trachea seed:[/dim] {','.join(str(int(c)) for c in seed)}",
        title="[bold blue]airway-gvf[/bold blue]",
        border_style="green",
    ))


@main.command(name="eval")
@click.option("--result", "result_path", required=True, type=click.Path(), help="segment output directory or mask file")
@click.option("--truth", "truth_dir", required=True, type=click.Path(), help="Ground-truth directory")
@click.option("--baseline", "baseline_path", default=None, type=click.Path(), help="Metrics JSON to compare against")
@click.option("--json", "json_path", default=None, type=click.Path(), help="Write metrics as JSON")
def eval_cmd(result_path: str, truth_dir: str, baseline_path: Optional[str], json_path: Optional[str]):
    """Score a segmentation against ground truth."""
    with _diagnostics():
        result = Path(result_path)
        mask = load_mask(result / "mask.mhd" if result.is_dir() else result)
        truth = load_ground_truth(truth_dir)
        baseline = None
        if baseline_path:
            path = Path(baseline_path)
            if not path.exists():
                raise FileNotFoundError(f"file not found: {path}")
            baseline = Metrics.model_validate_json(path.read_text())
        metrics = evaluate(mask, truth)
        if json_path:
            Path(json_path).write_text(metrics.model_dump_json(indent=2) + "\n")

    console.print(report(metrics, baseline))


@main.command()
@click.option("--volume", "volume_path", required=True, type=click.Path(), help="Input CT volume (.mhd/.mha)")
@click.option("--voi", "voi_text", required=True, help="bx,by,bz,ax,ay,az,cross_size,length in mm")
@click.option("--dump", "kind", required=True, type=click.Choice(DUMP_KINDS), help="Intermediate to write")
@click.option("--config", "config_path", default=None, type=click.Path(), help="key=value configuration file")
@click.option("--out", "out_dir", default=".", type=click.Path(), help="Output directory")
def debug(volume_path: str, voi_text: str, kind: str, config_path: Optional[str], out_dir: str):
    """Dump one stage of the per-VOI chain as VOI-frame volumes."""
    with _diagnostics():
        voi = _parse_voi(voi_text)
        config = load_config(config_path)
        volume = load_volume(volume_path)
        stages = analyse_voi(volume, voi, config)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        written = []
        if kind == "gvf":
            for axis, name in enumerate("xyz"):
                path = out / f"gvf_{name}.mhd"
                save_volume(stages["flow"].component(axis), path)
                written.append(path)
            path = out / "gvf_magnitude.mhd"
            save_volume(stages["gvf"], path)
            written.append(path)
        else:
            path = out / f"{kind}.mhd"
            save_volume(stages[kind], path)
            written.append(path)

    table = Table(title=f"debug {kind}", border_style="blue")
    table.add_column("File", style="white")
    table.add_column("Dims", style="dim")
    table.add_column("Pitch", justify="right")
    pitch = stages["resampled"].spacing[0]
    for path in written:
        table.add_row(str(path), str(stages["resampled"].dims), format_mm(pitch))
    console.print(table)
    console.print(f"[dim]VOI base[/dim] {format_point(voi.base)}  [dim]axis[/dim] {format_point(voi.axis)}")


if __name__ == "__main__":
    main()
