"""Results aggregation, tables and charts.

Standard errors are taken over seeds: every seed's success rate is first
averaged over the cells it owns, then SE = std(ddof=1) / sqrt(n_seeds).
"""

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.core.exceptions import ArtifactIOError, ConfigError, FormatError  # noqa: E402
from app.models.bench import AggregateRow, ResultCell, ResultsTable  # noqa: E402

RESULTS_SUFFIX = ".results.json"
# PNG metadata carries the matplotlib version by default; drop it for stable bytes.
_PNG_METADATA = {"Software": None}


def cells_frame(cells: Sequence[ResultCell]) -> pd.DataFrame:
    rows = [
        {
            "method": c.method,
            "human_task_count": c.human_task_count,
            "robot_demos": c.robot_demos,
            "tier": c.tier,
            "task": c.task,
            "seed": c.seed,
            "trials": c.trials,
            "successes": c.successes,
            "success_rate": c.success_rate,
            "dynamics_mode": c.dynamics_mode.value,
            "label": c.label or "",
        }
        for c in cells
    ]
    frame = pd.DataFrame(rows)
    if not frame.empty:
        frame["success_rate"] = frame["success_rate"].astype(float)
    return frame


def standard_error(values: pd.Series) -> float:
    n = int(values.count())
    if n < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(n))


def _summarize(frame: pd.DataFrame, keys: List[str]) -> List[dict]:
    per_seed = frame.groupby(keys + ["seed"], sort=True)["success_rate"].mean().reset_index()
    rows = []
    for group, seeds in per_seed.groupby(keys, sort=True):
        group = group if isinstance(group, tuple) else (group,)
        rates = seeds["success_rate"].dropna()
        row = {key: value.item() if isinstance(value, np.generic) else value for key, value in zip(keys, group)}
        row.update(
            mean=None if rates.empty else float(rates.mean()),
            se=None if rates.empty else standard_error(rates),
            n_seeds=int(rates.count()),
        )
        rows.append(row)
    return rows


def aggregate(cells: Sequence[ResultCell]) -> List[AggregateRow]:
    """Rows per (method, tier), per (method, tier, task) and per method over all tiers."""
    frame = cells_frame(cells)
    if frame.empty:
        return []
    rows = []
    for row in _summarize(frame, ["method"]):
        rows.append(AggregateRow(**row))
    for row in _summarize(frame, ["method", "tier"]):
        rows.append(AggregateRow(**row))
    for row in _summarize(frame, ["method", "tier", "task"]):
        rows.append(AggregateRow(**row))
    return rows


def finalize(table: ResultsTable) -> ResultsTable:
    """Cells in canonical key order with freshly computed aggregates."""
    cells = sorted(table.cells, key=lambda c: (c.method, c.tier, c.task, c.seed))
    return table.model_copy(update={"cells": cells, "aggregates": aggregate(cells)})


def load_tables(paths: Iterable[Path]) -> List[ResultsTable]:
    """Results files, or directories holding `*.results.json` files."""
    files: List[Path] = []
    for path in map(Path, paths):
        if path.is_dir():
            files.extend(sorted(path.glob(f"*{RESULTS_SUFFIX}")))
        elif path.exists():
            files.append(path)
        else:
            raise ArtifactIOError(f"no results at {path}")
    tables = []
    for file in files:
        try:
            tables.append(ResultsTable.from_json(file.read_text()))
        except ValueError as e:
            raise FormatError(f"malformed results file {file}: {e}") from e
    return tables


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e
    return path


def _save_figure(fig, path: Path) -> Path:
    try:
        fig.savefig(path, format="png", dpi=100, metadata=_PNG_METADATA)
    except OSError as e:
        raise ArtifactIOError(f"cannot write chart {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def _grouped_bars(ax, rows: pd.DataFrame, x_key: str, methods: List[str]) -> None:
    xs = sorted(rows[x_key].unique().tolist(), key=str)
    width = 0.8 / max(len(methods), 1)
    positions = np.arange(len(xs))
    for i, method in enumerate(methods):
        sub = rows[rows["method"] == method].set_index(x_key)
        means = [sub["mean"].get(x, np.nan) for x in xs]
        errors = [sub["se"].get(x, 0.0) for x in xs]
        ax.bar(
            positions + (i - (len(methods) - 1) / 2) * width,
            np.nan_to_num(np.asarray(means, dtype=float)),
            width,
            yerr=np.nan_to_num(np.asarray(errors, dtype=float)),
            capsize=3,
            label=method,
        )
    ax.set_xticks(positions)
    tilted = x_key != "tier"
    ax.set_xticklabels([str(x) for x in xs], rotation=30 if tilted else 0, ha="right" if tilted else "center")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("success rate")


def tier_chart(table: ResultsTable, path: Path) -> Path:
    """Mean success per method and tier with standard-error bars."""
    rows = pd.DataFrame([a.model_dump() for a in table.aggregates if a.tier is not None and a.task == "all"])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if not rows.empty:
        _grouped_bars(ax, rows, "tier", table.methods())
        ax.set_xlabel("environment tier")
        ax.legend(fontsize=8)
    ax.set_title(table.experiment)
    fig.tight_layout()
    return _save_figure(fig, path)


def task_chart(table: ResultsTable, path: Path) -> Path:
    """Per-task breakdown, one panel per tier."""
    rows = pd.DataFrame([a.model_dump() for a in table.aggregates if a.tier is not None and a.task != "all"])
    tiers = sorted(rows["tier"].unique().tolist()) if not rows.empty else [0]
    fig, axes = plt.subplots(1, len(tiers), figsize=(5 * len(tiers), 4.5), squeeze=False)
    for ax, tier in zip(axes[0], tiers):
        if not rows.empty:
            _grouped_bars(ax, rows[rows["tier"] == tier], "task", table.methods())
        ax.set_title(f"tier {tier}")
    if not rows.empty:
        axes[0][0].legend(fontsize=7)
    fig.suptitle(table.experiment)
    fig.tight_layout()
    return _save_figure(fig, path)


def accuracy_chart(curves: Dict[str, List[Dict[str, float]]], title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in sorted(curves):
        curve = curves[method]
        epochs = [entry["epoch"] for entry in curve]
        if any("train_acc" in entry for entry in curve):
            train_acc = [entry.get("train_acc", np.nan) for entry in curve]
            ax.plot(epochs, train_acc, linestyle="--", label=f"{method} train")
        ax.plot(epochs, [entry.get("val_acc", np.nan) for entry in curve], label=f"{method} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("pair accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save_figure(fig, path)


def _format_rate(mean: Optional[float], se: Optional[float]) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.3f} ± {se or 0.0:.3f}"


def summary_markdown(table: ResultsTable) -> str:
    tiers = sorted({a.tier for a in table.aggregates if a.tier is not None})
    overall = {a.method: a for a in table.aggregates if a.tier is None}
    by_tier = {(a.method, a.tier): a for a in table.aggregates if a.tier is not None and a.task == "all"}
    header = ["method"] + [f"tier {t}" for t in tiers] + ["all"]
    lines = [
        f"# {table.experiment}",
        "",
        f"spec digest `{table.spec_digest}`",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for method in table.methods():
        cells = [method]
        for tier in tiers:
            row = by_tier.get((method, tier))
            cells.append(_format_rate(row.mean, row.se) if row else "")
        row = overall.get(method)
        cells.append(_format_rate(row.mean, row.se) if row else "")
        lines.append("| " + " | ".join(cells) + " |")
    labels = sorted({c.label for c in table.cells if c.label})
    if labels:
        lines += ["", "Labelled cells: " + ", ".join(labels)]
    modes = sorted({c.dynamics_mode.value for c in table.cells})
    lines += ["", f"Dynamics: {', '.join(modes)}", ""]
    return "\n".join(lines)


def write_report(tables: Sequence[ResultsTable], out_dir: Path) -> List[Path]:
    """JSON, CSV, charts and a markdown summary per table."""
    if not tables or all(not t.cells for t in tables):
        raise ConfigError("report needs at least one non-empty results table")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"cannot create report directory {out_dir}: {e}") from e
    written: List[Path] = []
    summaries = []
    for table in tables:
        if not table.cells:
            continue
        table = finalize(table)
        stem = table.experiment
        written.append(_write_text(out_dir / f"{stem}{RESULTS_SUFFIX}", table.to_json()))
        frame = cells_frame(table.cells)
        written.append(_write_text(out_dir / f"{stem}.cells.csv", frame.to_csv(index=False, lineterminator="\n")))
        written.append(tier_chart(table, out_dir / f"{stem}_tiers.png"))
        written.append(task_chart(table, out_dir / f"{stem}_tasks.png"))
        if table.curves:
            written.append(accuracy_chart(table.curves, table.experiment, out_dir / f"{stem}_accuracy.png"))
        summaries.append(summary_markdown(table))
    written.append(_write_text(out_dir / "summary.md", "\n".join(summaries)))
    return written
