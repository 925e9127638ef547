import math

import pandas as pd
import pytest

from app.core.exceptions import ArtifactIOError, ConfigError, FormatError
from app.models.bench import ResultCell, ResultsTable
from app.services.report_service import (
    aggregate,
    finalize,
    load_tables,
    standard_error,
    summary_markdown,
    write_report,
)


def _cell(method, tier, task, seed, successes, trials=10, label=None):
    return ResultCell(method=method, tier=tier, task=task, seed=seed, trials=trials, successes=successes, label=label)


@pytest.fixture
def table():
    cells = [
        _cell("robot+6_human", 0, "drawer_close", 0, 8),
        _cell("robot+6_human", 0, "drawer_close", 1, 6),
        _cell("robot+6_human", 0, "drawer_close", 2, 4),
        _cell("robot+6_human", 1, "drawer_close", 0, 5),
        _cell("random", 0, "drawer_close", 0, 1),
        _cell("random", 0, "drawer_close", 1, 3),
        _cell("classifier_reward", 0, "faucet_right", 0, None),
    ]
    return ResultsTable(experiment="env-gen", spec_digest="abc", cells=cells)


def _row(rows, method, tier=None, task="all"):
    return next(r for r in rows if r.method == method and r.tier == tier and r.task == task)


def test_standard_error_over_seeds():
    rates = pd.Series([0.8, 0.6, 0.4])
    assert standard_error(rates) == pytest.approx(0.2 / math.sqrt(3))
    assert standard_error(pd.Series([0.5])) == 0.0


def test_aggregate_means_and_errors(table):
    rows = aggregate(table.cells)
    tier0 = _row(rows, "robot+6_human", tier=0)
    assert tier0.mean == pytest.approx(0.6)
    assert tier0.se == pytest.approx(0.2 / math.sqrt(3))
    assert tier0.n_seeds == 3

    overall = _row(rows, "robot+6_human")
    # Seed 0 owns two cells and averages them before the seed mean.
    assert overall.mean == pytest.approx((0.65 + 0.6 + 0.4) / 3)

    per_task = _row(rows, "random", tier=0, task="drawer_close")
    assert per_task.mean == pytest.approx(0.2)


def test_not_applicable_cells_aggregate_to_none(table):
    row = _row(aggregate(table.cells), "classifier_reward", tier=0)
    assert row.mean is None
    assert row.se is None
    assert row.n_seeds == 0


def test_finalize_orders_cells(table):
    final = finalize(table)
    keys = [c.key() for c in final.cells]
    assert keys == sorted(keys)
    assert final.aggregates


def test_results_json_round_trip(table):
    final = finalize(table)
    assert ResultsTable.from_json(final.to_json()) == final


def test_summary_marks_not_applicable(table):
    text = summary_markdown(finalize(table))
    assert "| classifier_reward | n/a |" in text
    assert "0.600 ± 0.115" in text
    assert "Dynamics: oracle" in text


def test_write_report_files(tmp_path, table):
    written = write_report([table], tmp_path / "report")
    names = {p.name for p in written}
    assert names == {
        "env-gen.results.json",
        "env-gen.cells.csv",
        "env-gen_tiers.png",
        "env-gen_tasks.png",
        "summary.md",
    }
    assert load_tables([tmp_path / "report"])[0] == finalize(table)


def test_charts_are_deterministic(tmp_path, table):
    write_report([table], tmp_path / "a")
    write_report([table], tmp_path / "b")
    for name in ("env-gen_tiers.png", "env-gen_tasks.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_accuracy_chart_with_curves(tmp_path, table):
    table.curves = {"robot+6_human": [{"epoch": 0, "train_acc": 0.6, "val_acc": 0.55}]}
    written = write_report([table], tmp_path)
    assert tmp_path / "env-gen_accuracy.png" in written


def test_empty_tables_are_config_error(tmp_path):
    with pytest.raises(ConfigError):
        write_report([], tmp_path)
    with pytest.raises(ConfigError):
        write_report([ResultsTable(experiment="x", spec_digest="0")], tmp_path)


def test_load_tables_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_tables([tmp_path / "absent.results.json"])
    bad = tmp_path / "bad.results.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        load_tables([bad])
