"""
Purpose: Command-line interface for the vessel segmentation toolkit

High-level Overview:
Click-based CLI with Rich terminal output chaining the pipeline: label
preparation, training, whole-image prediction, evaluation and per-image
reports, plus synthetic corpus generation and manifest inspection. Every
command takes the same run options; all randomness flows from `--seed`.

Key Components:
- Click command group with shared run options
- RunConfig assembly from `--config` files and `--set` overrides
- Rich console panels/tables and a RichHandler for log records
- One-line red diagnostics and exit status 1 on failure

Functions/Classes:
- `@click.group() cli`: Main CLI group
- `run_options(func)`: Shared `--manifest/--config/--out/--seed/--set/--verbose/--debug`
- `_setup_logging(verbose, debug)`: Install the RichHandler
- `_load_run(subcommand, ...)`: Build the RunConfig
- `_guard(debug)`: Turn any error into a one-line diagnostic and exit status 1
- `cmd_prepare(run, reporter)`: Class maps, weight file, histogram
- `cmd_train(run, reporter, resume, quiet)`: Train and write checkpoints/log/curve
- `cmd_predict(run, checkpoint, split)`: Vessel scores and masks per image
- `cmd_evaluate(run, reporter, checkpoint, split)`: Metrics CSV/Markdown/table
- `cmd_report(run, reporter, image, checkpoint, ...)`: The report figure set
- `@cli.command() prepare | train | predict | evaluate | report | synthesize | info`
"""

import logging
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .config import Config
from .dataio import ManifestEntry, load_image, load_manifest, load_mask, read_checkpoint
from .errors import ArgumentError, VesselSegError
from .evaluate import binarize, evaluate_entries, predict_entry, predict_file
from .labelgen import build_class_map, class_histogram, weights_from_frequencies
from .network import ParamStore
from .report_generator import ReportGenerator
from .runconfig import RunConfig
from .synthetic import generate_corpus
from .training import train
from .utils.file_handler import FileHandler


# Force UTF-8 stdout/stderr on Windows to avoid Unicode errors
try:
    sys.stdout.reconfigure(encoding='utf-8')
    sys.stderr.reconfigure(encoding='utf-8')
except Exception:
    pass

console = Console(emoji=False)


def run_options(func):
    """Attach the options every pipeline command shares."""
    options = [
        click.option('--manifest', '-m', type=click.Path(path_type=Path), help='Manifest CSV or DRIVE-style dataset root'),
        click.option('--config', '-c', 'config_paths', type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     multiple=True, help='key=value config file (repeatable, merged left to right)'),
        click.option('--out', '-o', 'output_dir', type=click.Path(file_okay=False, path_type=Path),
                     help='Output directory (default: $VSEG_OUTPUT_DIR or runs)'),
        click.option('--seed', type=int, help='Seed for every random draw of the run'),
        click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE', help='Override one config key (repeatable)'),
        click.option('--verbose', '-v', is_flag=True, help='Log progress messages'),
        click.option('--debug', is_flag=True, help='Debug logging and tracebacks on errors'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _setup_logging(verbose: bool, debug: bool) -> None:
    level = logging.DEBUG if debug else logging.INFO if verbose else Config.get_log_level()
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=debug)],
        force=True,
    )


@contextmanager
def _guard(debug: bool):
    """Print one red line and exit 1 on toolkit or I/O errors."""
    try:
        yield
    except (VesselSegError, OSError) as e:
        console.print(f"[red]❌ {e}[/red]")
        if debug:
            console.print(traceback.format_exc())
        sys.exit(1)
    except Exception as e:
        console.print(f"[red]❌ Unexpected error: {type(e).__name__}: {e}[/red]")
        if debug:
            console.print(traceback.format_exc())
        sys.exit(1)


def _load_run(subcommand: str, manifest, config_paths, output_dir, seed, overrides,
              verbose: bool, debug: bool) -> RunConfig:
    _setup_logging(verbose, debug)
    return RunConfig.load(subcommand, config_paths, overrides, seed, manifest, output_dir)


def _require_manifest(run: RunConfig):
    if run.manifest is None:
        raise ArgumentError("this command needs --manifest")
    return load_manifest(run.manifest)


def _load_params(checkpoint: Path) -> ParamStore:
    return ParamStore.from_tensors(read_checkpoint(checkpoint).tensors)


def _split_entries(run: RunConfig, split: str) -> List[ManifestEntry]:
    manifest = _require_manifest(run)
    entries = manifest.entries if split == "all" else manifest.split(split)
    if not entries:
        raise ArgumentError(f"manifest {run.manifest} has no entries in split {split!r}")
    return entries


def cmd_prepare(run: RunConfig, reporter: ReportGenerator) -> Dict[str, object]:
    """Write per-image class maps and a frequency-derived class-weight config fragment."""
    manifest = _require_manifest(run)
    if len(manifest) == 0:
        raise ArgumentError(f"manifest {run.manifest} is empty")
    files = FileHandler()
    labels_dir = files.ensure_dir(run.output_dir / "labels")

    maps, train_maps, written = [], [], []
    with console.status("[bold blue]Generating class maps..."):
        for entry in manifest:
            class_map = build_class_map(load_mask(entry.ground_truth), run.label.band_radius, run.label.scheme)
            written.append(files.save_class_map(class_map.data, labels_dir / f"{entry.stem}_classes.png"))
            maps.append(class_map)
            if entry.split == "train":
                train_maps.append(class_map)

    weights = weights_from_frequencies(train_maps or maps, run.train.weight_boost)
    weights_path = run.output_dir / "class_weights.conf"
    weights_path.write_text(weights.to_config_fragment(), encoding="utf-8")

    counts = class_histogram(maps)
    reporter.print_class_histogram(counts)
    console.print(f"[green]✅ Wrote {len(written)} class maps to {labels_dir} and weights to {weights_path}[/green]")
    return {"class_maps": written, "weights": weights, "weights_path": weights_path, "histogram": counts}


def cmd_train(run: RunConfig, reporter: ReportGenerator, resume: Optional[Path] = None, quiet: bool = False):
    manifest = _require_manifest(run)
    (run.output_dir / "config.resolved.conf").write_text(run.render(), encoding="utf-8")
    checkpoint, log = train(manifest, run, run.output_dir, resume=resume, quiet=quiet)
    reporter.write_loss_curve(log, run.output_dir / "loss_curve.png")
    console.print(f"[green]✅ Trained {checkpoint.epoch} epochs; final loss {log.records[-1]['total']:.5f}[/green]")
    return checkpoint, log


def cmd_predict(run: RunConfig, checkpoint: Path, split: str = "test") -> pd.DataFrame:
    """Write `<stem>_vessel.png` (score x 255) and `<stem>_mask.png` per image, plus timing.csv."""
    params = _load_params(checkpoint)
    files = FileHandler()
    out_dir = files.ensure_dir(run.output_dir / "predictions")
    timings = []
    with console.status("[bold blue]Predicting...") as status:
        for entry in _split_entries(run, split):
            status.update(f"[bold blue]Predicting {entry.stem}...")
            _, prob, seconds = predict_entry(entry, params, run)
            files.save_gray_png(np.clip(prob.vessel_score(), 0.0, 1.0), out_dir / f"{entry.stem}_vessel.png")
            files.save_gray_png(binarize(prob).data.astype(np.uint8) * 255, out_dir / f"{entry.stem}_mask.png")
            timings.append({"image": entry.stem, "seconds": seconds})
            logging.info(f"Predicted {entry.stem} in {seconds:.2f}s")
    timing = pd.DataFrame(timings, columns=["image", "seconds"])
    timing.to_csv(run.output_dir / "timing.csv", index=False, float_format="%.4f")
    console.print(f"[green]✅ Wrote {len(timing)} predictions to {out_dir}[/green]")
    return timing


def cmd_evaluate(run: RunConfig, reporter: ReportGenerator, checkpoint: Path, split: str = "test") -> pd.DataFrame:
    params = _load_params(checkpoint)
    entries = _split_entries(run, split)
    with console.status("[bold blue]Evaluating...") as status:
        metrics, timing = evaluate_entries(
            entries, params, run, on_image=lambda r: status.update(f"[bold blue]Evaluated {r.name}..."))
    reporter.write_metrics_csv(metrics, run.output_dir / "metrics.csv")
    reporter.generate_markdown_report(metrics, timing, run.output_dir / "metrics.md")
    timing.to_csv(run.output_dir / "timing.csv", index=False, float_format="%.4f")
    reporter.print_metrics(metrics)
    return metrics


def cmd_report(run: RunConfig, reporter: ReportGenerator, image: Path, checkpoint: Path,
               ground_truth: Optional[Path] = None, fov: Optional[Path] = None) -> List[Path]:
    params = _load_params(checkpoint)
    fundus, prob, _ = predict_file(Path(image), params, run, include_sides=True)
    gt = load_mask(ground_truth) if ground_truth else None
    fov_mask = load_mask(fov) if fov else None
    written = reporter.write_report_images(fundus, prob, run.output_dir, gt, fov_mask)
    console.print(f"[green]✅ Wrote {len(written)} images to {run.output_dir}[/green]")
    return written


@click.group()
@click.version_option(version=__version__)
def cli():
    """Retinal vessel segmentation with edge-aware labels and a deeply supervised residual U-net."""


@cli.command()
@run_options
def prepare(manifest, config_paths, output_dir, seed, overrides, verbose, debug):
    """Generate 5-class label maps and a class-weight config fragment.

    Example: vseg prepare --manifest data/DRIVE --out runs/drive --set label.band_radius=2
    """
    with _guard(debug):
        run = _load_run("prepare", manifest, config_paths, output_dir, seed, overrides, verbose, debug)
        reporter = ReportGenerator(console)
        reporter.print_header("Prepare Labels", {"Manifest": run.manifest, "Band radius": run.label.band_radius,
                                                 "Scheme": run.label.scheme})
        cmd_prepare(run, reporter)


@cli.command(name="train")
@run_options
@click.option('--resume', type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help='Continue from a training checkpoint')
@click.option('--quiet', '-q', is_flag=True, help='Hide progress bars')
def train_command(manifest, config_paths, output_dir, seed, overrides, verbose, debug, resume, quiet):
    """Train the network on the manifest's train split."""
    with _guard(debug):
        run = _load_run("train", manifest, config_paths, output_dir, seed, overrides, verbose, debug)
        reporter = ReportGenerator(console)
        reporter.print_header("Training", {"Manifest": run.manifest, "Output": run.output_dir,
                                           "Epochs": run.train.epochs, "Channels": run.net.channels,
                                           "Seed": run.seed})
        cmd_train(run, reporter, resume=resume, quiet=quiet)


@cli.command()
@run_options
@click.option('--checkpoint', '-k', required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option('--split', default='test', show_default=True, help="Manifest split to predict ('all' for every entry)")
def predict(manifest, config_paths, output_dir, seed, overrides, verbose, debug, checkpoint, split):
    """Predict vessel probability maps and masks for whole images."""
    with _guard(debug):
        run = _load_run("predict", manifest, config_paths, output_dir, seed, overrides, verbose, debug)
        cmd_predict(run, checkpoint, split)


@cli.command()
@run_options
@click.option('--checkpoint', '-k', required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option('--split', default='test', show_default=True, help="Manifest split to evaluate ('all' for every entry)")
def evaluate(manifest, config_paths, output_dir, seed, overrides, verbose, debug, checkpoint, split):
    """Compute Acc, Sp, Se, AUC and thin/thick AUC against the ground truth."""
    with _guard(debug):
        run = _load_run("evaluate", manifest, config_paths, output_dir, seed, overrides, verbose, debug)
        reporter = ReportGenerator(console)
        reporter.print_header("Evaluation", {"Manifest": run.manifest, "Checkpoint": checkpoint, "Split": split})
        cmd_evaluate(run, reporter, checkpoint, split)


@cli.command()
@run_options
@click.option('--image', '-i', required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option('--checkpoint', '-k', required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option('--ground-truth', '-g', type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help='Vessel mask for the error overlay')
@click.option('--fov', type=click.Path(exists=True, dir_okay=False, path_type=Path), help='Field-of-view mask')
def report(manifest, config_paths, output_dir, seed, overrides, verbose, debug, image, checkpoint, ground_truth, fov):
    """Write heatmap, side-output maps, mask and error overlay for one image."""
    with _guard(debug):
        run = _load_run("report", manifest, config_paths, output_dir, seed, overrides, verbose, debug)
        cmd_report(run, ReportGenerator(console), image, checkpoint, ground_truth, fov)


@cli.command()
@click.option('--out', '-o', 'output_dir', required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option('--count', default=60, show_default=True, help='Number of images')
@click.option('--size', default=128, show_default=True, help='Image side length in pixels')
@click.option('--train', 'n_train', default=48, show_default=True, help='Images tagged as train')
@click.option('--seed', type=int, help='Corpus seed')
@click.option('--debug', is_flag=True)
def synthesize(output_dir, count, size, n_train, seed, debug):
    """Generate a synthetic fundus-like corpus with a manifest."""
    with _guard(debug):
        _setup_logging(False, debug)
        seed = Config.get_default_seed() if seed is None else seed
        with console.status("[bold blue]Rendering synthetic corpus..."):
            manifest = generate_corpus(output_dir, count, size, n_train, seed)
        console.print(f"[green]✅ Wrote {len(manifest)} images and {output_dir / 'manifest.csv'}[/green]")


@cli.command()
@click.argument('manifest_path', type=click.Path(exists=True, path_type=Path))
@click.option('--debug', is_flag=True)
def info(manifest_path, debug):
    """Summarize a manifest: entries per split, image sizes, FOV availability."""
    with _guard(debug):
        _setup_logging(False, debug)
        manifest = load_manifest(manifest_path)
        sizes: Dict = {}
        for entry in manifest:
            image = load_image(entry.image)
            key = (image.height, image.width)
            sizes[key] = sizes.get(key, 0) + 1
        ReportGenerator(console).print_manifest_info(manifest, sizes)
