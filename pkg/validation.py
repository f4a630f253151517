"""
End-to-End Validation Suite
Runs the documented vseg workflow on a synthetic corpus and checks the headline numbers.
"""

import filecmp
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

console = Console()

ROOT = Path(__file__).parent
WORK = ROOT / "validation_runs"
CORPUS = WORK / "corpus"
MANIFEST = CORPUS / "manifest.csv"
AUC_TARGET = 0.95


def run_command(args, description, timeout=3600):
    """Run `python -m vessel_segmentation <args>` and return detailed results."""
    console.print(f"[blue]Testing: {description}[/blue]")
    console.print(f"[dim]Command: vseg {' '.join(args)}[/dim]")

    try:
        start = time.time()
        result = subprocess.run(
            [sys.executable, "-m", "vessel_segmentation", *args],
            cwd=ROOT,
            capture_output=True,
            text=True,
            timeout=timeout,
            encoding='utf-8',
            errors='ignore'
        )
        elapsed = time.time() - start
        success = result.returncode == 0

        if success:
            console.print(f"  [green]SUCCESS[/green] - {elapsed:.1f}s")
        else:
            console.print(f"  [red]FAILED[/red] - Exit code: {result.returncode}")
            console.print(f"  [red]Error: {(result.stdout + result.stderr)[-300:]}[/red]")

        return {"success": success, "exit_code": result.returncode, "seconds": elapsed,
                "stdout": result.stdout, "stderr": result.stderr}

    except subprocess.TimeoutExpired:
        console.print(f"  [red]TIMEOUT[/red] after {timeout}s")
        return {"success": False, "timeout": True}
    except Exception as e:
        console.print(f"  [red]ERROR[/red]: {e}")
        return {"success": False, "error": str(e)}


def test_basic_commands():
    """Version, help and corpus generation."""
    console.print(Panel("[bold]Basic CLI Commands[/bold]", border_style="blue"))

    commands = [
        (["--version"], "Version information"),
        (["--help"], "Help documentation"),
        (["train", "--help"], "Train command help"),
        (["synthesize", "--out", str(CORPUS), "--count", "60", "--size", "128", "--train", "48",
          "--seed", "0"], "Synthetic corpus"),
        (["info", str(MANIFEST)], "Manifest summary"),
    ]
    return {desc: run_command(cmd, desc, 300) for cmd, desc in commands}


def _pipeline(name, configs, seed=0):
    """Prepare, train and evaluate one run directory."""
    out = WORK / name
    config_args = []
    for conf in configs:
        config_args += ["--config", str(ROOT / "configs" / conf)]
    common = ["--manifest", str(MANIFEST), "--out", str(out), "--seed", str(seed), *config_args]

    results = {
        f"{name}: prepare": run_command(["prepare", *common], f"{name}: label generation", 300),
        f"{name}: train": run_command(["train", *common, "--quiet"], f"{name}: training"),
    }
    if results[f"{name}: train"].get("success"):
        results[f"{name}: evaluate"] = run_command(
            ["evaluate", *common, "--checkpoint", str(out / "model.vseg")], f"{name}: evaluation", 600)
    return results


def test_training_runs():
    """Edge-aware model and the binary baseline on the same corpus."""
    console.print(Panel("[bold]Training Runs[/bold]", border_style="green"))
    results = _pipeline("edge_aware", ["synthetic.conf"])
    results.update(_pipeline("baseline", ["synthetic.conf", "baseline_binary.conf"]))
    return results


def test_determinism():
    """Retrain with the same seed and compare the logs and final checkpoints."""
    console.print(Panel("[bold]Determinism[/bold]", border_style="yellow"))
    out = WORK / "rerun"
    result = run_command(["train", "--manifest", str(MANIFEST), "--out", str(out), "--seed", "0",
                          "--config", str(ROOT / "configs" / "synthetic.conf"), "--quiet"], "Same-seed retrain")
    if not result.get("success"):
        return {"identical": False, "error": "retrain failed"}

    first = WORK / "edge_aware"
    logs_match = (
        pd.read_csv(first / "train_log.csv").drop(columns="seconds")
        .equals(pd.read_csv(out / "train_log.csv").drop(columns="seconds"))
    )
    models_match = filecmp.cmp(first / "model.vseg", out / "model.vseg", shallow=False)
    console.print(f"  Loss log identical: {logs_match}")
    console.print(f"  Checkpoint identical: {models_match}")
    return {"identical": logs_match and models_match}


def read_metrics():
    """Pooled metrics per run from metrics.csv."""
    metrics = {}
    for name in ("edge_aware", "baseline"):
        path = WORK / name / "metrics.csv"
        if path.exists():
            frame = pd.read_csv(path)
            metrics[name] = frame[frame["image"] == "ALL"].iloc[0].to_dict()
    return metrics


def generate_summary_report(all_results, metrics, duration):
    """Render the results table and the final verdict."""
    table = Table(title="End-to-End Validation Results")
    table.add_column("Test Category", style="cyan")
    table.add_column("Passed", style="green")
    table.add_column("Total", style="white")
    table.add_column("Status", style="yellow")

    issues = []
    for category in ("basic", "training"):
        results = all_results[category]
        passed = sum(1 for r in results.values() if r.get("success", False))
        table.add_row(category.title(), str(passed), str(len(results)),
                      "PASS" if passed == len(results) else "ISSUES")
        if passed != len(results):
            issues.append(f"{category} commands failed: {len(results) - passed}")

    identical = all_results["determinism"].get("identical", False)
    table.add_row("Determinism", "Yes" if identical else "No", "1", "PASS" if identical else "ISSUES")
    if not identical:
        issues.append("same-seed retrain differs")

    edge = metrics.get("edge_aware")
    if edge is not None:
        ok = edge["AUC"] >= AUC_TARGET
        table.add_row("Edge-aware AUC", f"{edge['AUC']:.4f}", f">= {AUC_TARGET}", "PASS" if ok else "ISSUES")
        if not ok:
            issues.append(f"AUC {edge['AUC']:.4f} below {AUC_TARGET}")
    else:
        issues.append("edge-aware metrics missing")

    base = metrics.get("baseline")
    if edge is not None and base is not None:
        better = edge["AUC_thin"] > base["AUC_thin"]
        table.add_row("Thin AUC vs baseline", f"{edge['AUC_thin']:.4f}", f"{base['AUC_thin']:.4f}",
                      "BETTER" if better else "NOT BETTER")
        if not better:
            issues.append(f"thin-vessel AUC {edge['AUC_thin']:.4f} does not beat baseline {base['AUC_thin']:.4f}")
    elif edge is not None:
        issues.append("baseline metrics missing")

    console.print(table)

    if not issues:
        verdict = Panel(
            f"[bold green]VALIDATION COMPLETE - PIPELINE OPERATIONAL[/bold green]\n\n"
            f"• Pooled AUC: {edge['AUC']:.4f}\n"
            f"• Accuracy: {edge['Acc']:.4f}\n"
            f"• Test Duration: {duration:.1f} seconds",
            title="VALIDATION SUCCESS",
            border_style="green"
        )
    else:
        verdict = Panel(
            f"[bold red]VALIDATION ISSUES DETECTED[/bold red]\n\n"
            f"Issues found:\n" + "\n".join(f"• {issue}" for issue in issues),
            title="NEEDS ATTENTION",
            border_style="red"
        )
    console.print(verdict)
    return not issues


def main():
    """Run the end-to-end validation."""
    start_time = time.time()
    console.print(Panel(
        "[bold]End-to-End Validation Suite[/bold]\n"
        "Synthetic corpus, edge-aware and binary training, evaluation and determinism",
        title="VSEG VALIDATION",
        border_style="blue"
    ))

    if WORK.exists():
        shutil.rmtree(WORK)

    console.print("\n" + "=" * 80)
    basic_results = test_basic_commands()
    console.print("\n" + "=" * 80)
    training_results = test_training_runs()
    console.print("\n" + "=" * 80)
    determinism = test_determinism()

    all_results = {"basic": basic_results, "training": training_results, "determinism": determinism}
    console.print("\n" + "=" * 80)
    ok = generate_summary_report(all_results, read_metrics(), time.time() - start_time)

    if "--keep" not in sys.argv:
        shutil.rmtree(WORK, ignore_errors=True)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
