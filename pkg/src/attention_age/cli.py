"""Command-line entry point for attention-age."""

from __future__ import annotations

import functools
import json
import logging
import sys
from typing import Any, Callable, Dict, NoReturn

import click

from . import __version__
from .commands import config_cmd
from .commands import evaluate as evaluate_cmd
from .commands import gen_data as gen_data_cmd
from .commands import localize as localize_cmd
from .commands import report as report_cmd
from .commands import sweep as sweep_cmd
from .commands import train_phase1 as phase1_cmd
from .commands import train_phase2 as phase2_cmd
from .core.command_utils import SPLITS, format_table, summary_table
from .core.config import PHASE1_MODES
from .core.errors import (
    CheckpointMismatchError,
    ConfigError,
    DatasetFormatError,
    ExperimentLockedError,
    ShapeMismatchError,
)
from .core.exit_codes import (
    CODE_NAMES,
    ERR_CHECKPOINT,
    ERR_CONFIG,
    ERR_DATA,
    ERR_LOCKED,
    ERR_RUNTIME,
    ERR_USAGE,
)

# Setup logging early so submodules inherit sane defaults
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the documented exit codes."""
    if isinstance(exc, ConfigError):
        return ERR_CONFIG
    if isinstance(exc, CheckpointMismatchError):
        return ERR_CHECKPOINT
    if isinstance(exc, ExperimentLockedError):
        return ERR_LOCKED
    if isinstance(exc, (DatasetFormatError, ShapeMismatchError, FileNotFoundError)):
        return ERR_DATA
    if isinstance(exc, (ValueError, KeyError)):
        return ERR_USAGE
    return ERR_RUNTIME


def fail(command: str, exc: BaseException) -> NoReturn:
    code = exit_code_for(exc)
    message = " ".join(str(exc).split()) or type(exc).__name__
    click.echo(f"❌ {command} failed [{CODE_NAMES[code]}]: {message}", err=True)
    sys.exit(code)


def common_options(fn: Callable) -> Callable:
    """Flags shared by every pipeline command."""
    options = [
        click.option("--config", "config_path", default=None, help="Experiment YAML ('default' or omitted: bundled defaults, or the saved experiment.yaml)"),
        click.option("--out", default=None, help="Experiment root (default: $ATTENTION_AGE_DATA_DIR/experiments/default)"),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the configured seed"),
        click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads for per-image work"),
        click.option("--force", is_flag=True, help="Rerun even if the stage is up to date"),
        click.option("--json", "output_json", is_flag=True, help="Print the result as JSON"),
        click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _prepare(verbose: bool, output_json: bool) -> None:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    if output_json:
        logging.getLogger("attention_age").setLevel(logging.WARNING)


def _pipeline_kwargs(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    _prepare(kwargs.pop("verbose"), kwargs["output_json"])
    return kwargs


def _emit_json(result: Any) -> None:
    click.echo(json.dumps(result, indent=2, sort_keys=True, default=str))


def guarded(command: str) -> Callable:
    """Run the wrapped command body, turning exceptions into one-line failures."""

    def decorate(fn: Callable) -> Callable:
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except SystemExit:
                raise
            except Exception as exc:
                logging.getLogger(__name__).debug("%s failed", command, exc_info=True)
                fail(command, exc)

        return wrapper

    return decorate


class UsageFailure(click.ClickException):
    """A parse error shown as the same one-line failure as a command error."""

    exit_code = ERR_USAGE

    def __init__(self, command: str, message: str) -> None:
        super().__init__(" ".join(message.split()))
        self.command = command

    def show(self, file=None) -> None:
        click.echo(f"❌ {self.command} failed [{CODE_NAMES[ERR_USAGE]}]: {self.message}", file=file, err=True)


def _command_label(info_name: str, parent: click.Context = None) -> str:
    names = [info_name or "attention-age"]
    while parent is not None and parent.parent is not None:
        names.insert(0, parent.info_name)
        parent = parent.parent
    return " ".join(names)


# Bare group invocations still print their help.
_HELP_ERRORS = tuple(filter(None, [getattr(click.exceptions, "NoArgsIsHelpError", None)]))


def _one_line(exc: click.UsageError, info_name: str, parent) -> NoReturn:
    if isinstance(exc, _HELP_ERRORS):
        raise exc
    raise UsageFailure(_command_label(info_name, parent), exc.format_message()) from exc


class AgeCommand(click.Command):
    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as exc:
            _one_line(exc, info_name, parent)


class AgeGroup(click.Group):
    command_class = AgeCommand
    group_class = type

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as exc:
            _one_line(exc, info_name, parent)

    def resolve_command(self, ctx, args):
        try:
            return super().resolve_command(ctx, args)
        except click.UsageError as exc:
            _one_line(exc, ctx.info_name, ctx.parent)


@click.group(cls=AgeGroup)
@click.version_option(version=__version__, prog_name="attention-age")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
def cli(verbose: bool) -> None:
    """attention-age - attention-guided region localization and age-distribution regression."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command("gen-data")
@click.option("--n", type=click.IntRange(min=1), default=None, help="Number of samples (overrides data.generate.n)")
@common_options
@guarded("gen-data")
def gen_data(n, **kwargs) -> None:
    """Render the synthetic dataset into <out>/data."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = gen_data_cmd.run(kwargs["config_path"], kwargs["out"], n=n, seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"])
    if output_json:
        _emit_json(result)
        return
    state = "already up to date" if result.get("skipped") else "generated"
    click.echo(f"✅ gen-data: {result.get('count')} samples {state} in {result['path']}")
    oracle = result.get("oracle_mae") or {}
    if oracle:
        click.echo(format_table(["oracle", "mae"], [(name, float(value)) for name, value in oracle.items()]))


@cli.command("train-phase1")
@click.option("--mode", type=click.Choice([*PHASE1_MODES, "all"]), default="all", show_default=True, help="Which classifier to train")
@common_options
@guarded("train-phase1")
def train_phase1(mode, **kwargs) -> None:
    """Train the Phase I soft-label classifiers."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = phase1_cmd.run(kwargs["config_path"], kwargs["out"], mode=mode, seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"])
    if output_json:
        _emit_json(result)
        return
    rows = [
        (m, s.get("epochs"), s.get("images"), s.get("initial_loss"), s.get("final_loss"), "up to date" if s.get("skipped") else "trained")
        for m, s in result.items()
    ]
    click.echo(format_table(["mode", "epochs", "images", "first loss", "last loss", "status"], rows, floats="{:.4f}"))
    click.echo("✅ train-phase1 completed")


@cli.command("localize")
@click.option("--dump-maps", is_flag=True, help="Also write heat maps to heatmaps/<kind>/<id>.pfm")
@common_options
@guarded("localize")
def localize(dump_maps, **kwargs) -> None:
    """Localize Hand, Region1 and Region2 and write crops."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = localize_cmd.run(kwargs["config_path"], kwargs["out"], dump_maps=dump_maps, seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"])
    if output_json:
        _emit_json(result)
        return
    rows = [(r["kind"], r["miou"], r["ap50"], r["tau"], r["count"]) for r in result.get("localization", [])]
    if rows:
        click.echo(format_table(["kind", "mIoU", "AP50", "tau", "test images"], rows))
    state = "already up to date" if result.get("skipped") else "completed"
    click.echo(f"✅ localize {state}: {result.get('images')} images, {result.get('skipped_images', 0)} fallback box(es)")


@cli.command("train-phase2")
@common_options
@guarded("train-phase2")
def train_phase2(**kwargs) -> None:
    """Train the Phase II regressor on the cached region crops."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = phase2_cmd.run(kwargs["config_path"], kwargs["out"], seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"])
    if output_json:
        _emit_json(result)
        return
    click.echo(summary_table(result, skip=("checkpoint",)))
    click.echo(f"✅ train-phase2 {'already up to date' if result.get('skipped') else 'completed'}")


@cli.command("evaluate")
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--shuffle-labels", is_flag=True, help="Also train and score a shuffled-label control")
@common_options
@guarded("evaluate")
def evaluate(split, shuffle_labels, **kwargs) -> None:
    """Evaluate the Phase II checkpoint and write reports/<split>/."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = evaluate_cmd.run(
        kwargs["config_path"], kwargs["out"], split=split, shuffle_labels=shuffle_labels,
        seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"],
    )
    if output_json:
        _emit_json(result)
        return
    rows = [("mae", result["mae"]), ("count", result["count"])]
    rows += sorted((result.get("diagnostics") or {}).items())
    rows += [(k, v) for k, v in sorted(result["notes"].items()) if not isinstance(v, list)]
    click.echo(format_table(["metric", "value"], rows))
    loc = [(r["kind"], r["miou"], r["ap50"], r["tau"], r["count"]) for r in result.get("localization", [])]
    if loc:
        click.echo(format_table(["kind", "mIoU", "AP50", "tau", "images"], loc))
    click.echo(f"✅ evaluate completed: {split} MAE {result['mae']:.3f} months")


@cli.command("sweep")
@click.option("--param", type=click.Choice(sweep_cmd.PARAMS), required=True)
@click.option("--grid", required=True, help="Comma-separated values, e.g. 0,0.001,0.01 or 10,20,...,100 or H+R1,O")
@click.option("--seeds", type=click.IntRange(min=1), default=1, show_default=True, help="Training seeds per value")
@click.option("--metric", type=click.Choice([*sweep_cmd.REGRESSION_METRICS, *sweep_cmd.LOCALIZATION_METRICS]), default=None)
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--kind", default="region1", show_default=True, help="Region kind for a tau sweep")
@common_options
@guarded("sweep")
def sweep(param, grid, seeds, metric, split, kind, **kwargs) -> None:
    """Tabulate a metric over a parameter grid (CSV + SVG under sweeps/)."""
    kwargs = _pipeline_kwargs(kwargs)
    output_json = kwargs.pop("output_json")
    result = sweep_cmd.run(
        kwargs["config_path"], kwargs["out"], param=param, grid=grid, seeds=seeds, metric=metric,
        split=split, kind=kind, seed=kwargs["seed"], threads=kwargs["threads"], force=kwargs["force"],
    )
    if output_json:
        _emit_json(result)
        return
    best = result["best_index"]
    rows = [
        (value, float(metric_value), "*" if i == best else "")
        for i, (value, metric_value) in enumerate(zip(result["grid"], result["values"]))
    ]
    click.echo(format_table([param, result["metric"], "best"], rows, floats="{:.4f}"))
    click.echo(f"✅ sweep completed: best {param} = {result['grid'][best]}")


@cli.command("report")
@click.argument("path", required=False)
@click.option("--json", "output_json", is_flag=True, help="Print the result as JSON")
@guarded("report")
def report(path, output_json) -> None:
    """Summarize a dataset directory or an experiment root."""
    result = report_cmd.run(path)
    if output_json:
        _emit_json(result)
        return
    dataset = result.get("dataset")
    if dataset:
        click.echo(f"Dataset {dataset['path']}: {dataset.get('count')} samples")
        oracle = dataset.get("oracle_mae") or {}
        if oracle:
            click.echo(format_table(["oracle", "mae"], [(k, float(v)) for k, v in oracle.items()]))
    if result.get("stages"):
        click.echo(format_table(["stage", "config"], [(s["stage"], s["config_hash"]) for s in result["stages"]]))
    if result.get("reports"):
        click.echo(format_table(
            ["split", "images", "mae", "mean_kl"],
            [(name, r.get("count"), r.get("mae"), (r.get("diagnostics") or {}).get("mean_kl")) for name, r in result["reports"].items()],
        ))
    if result.get("sweeps"):
        rows = []
        for name, table in result["sweeps"].items():
            i = table["best_index"]
            rows.append((name, table["metric"], table["grid"][i], float(table["values"][i])))
        click.echo(format_table(["sweep", "metric", "best", "value"], rows))


# --- Config inspection ---

@cli.group("config")
def config_group() -> None:
    """View and validate experiment configuration."""


@config_group.command("show")
@click.option("--config", "config_path", default=None, help="Experiment YAML (default: bundled defaults)")
@guarded("config show")
def config_show(config_path) -> None:
    """Print the merged configuration."""
    click.echo(config_cmd.show(config_path).rstrip())


@config_group.command("get")
@click.argument("key")
@click.option("--config", "config_path", default=None, help="Experiment YAML (default: bundled defaults)")
@guarded("config get")
def config_get(key, config_path) -> None:
    """Get a config value by dot-notation key (e.g. labels.lambda)."""
    click.echo(config_cmd.get_value(config_path, key))


@config_group.command("validate")
@click.option("--config", "config_path", default=None, help="Experiment YAML (default: bundled defaults)")
@guarded("config validate")
def config_validate(config_path) -> None:
    """Run full configuration validation."""
    valid, problems, unknown = config_cmd.validate(config_path)
    for problem in problems:
        click.echo(f"  - {problem}")
    if unknown:
        click.echo(f"Unknown keys: {', '.join(unknown)}")
    if not valid:
        click.echo(f"❌ config validate failed [{CODE_NAMES[ERR_CONFIG]}]: {len(problems)} problem(s)", err=True)
        sys.exit(ERR_CONFIG)
    click.echo("✅ Configuration is valid")


if __name__ == "__main__":  # pragma: no cover - script entry
    cli()
