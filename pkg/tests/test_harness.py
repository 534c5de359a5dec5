import csv
import json

import numpy as np
import pytest

import tstransfer.harness as harness
from helpers import make_sine_dataset
from tstransfer import (
    SimilarityMatrix,
    SourceRanking,
    TrainConfig,
    UndefinedVariationError,
    VariationMatrix,
    accuracy_variation,
    aggregate,
    build_model,
    compare_selection,
    derive_seed,
    evaluate,
    load_matrix_results,
    run_matrix,
    run_pair,
    swap_head,
    write_report,
    write_variation_csv,
)

FAST = TrainConfig(epochs=2, batch_size=8, seed=0)


def tiny_datasets(n=2, seed=50):
    freq_sets = [(2.0, 5.0), (2.2, 5.5), (8.0, 12.0), (3.0, 9.0)]
    return [
        make_sine_dataset(
            name, freq_sets[k], n_train=8, n_test=6, length=16, seed=seed + k
        )
        for k, name in enumerate("ABCD"[:n])
    ]


class TestAccuracyVariation:
    def test_improvement_example(self):
        value = accuracy_variation(0.746, 0.865)
        assert value == 100.0 * (0.865 - 0.746) / 0.746
        assert round(value) == 16

    def test_degradation_example(self):
        value = accuracy_variation(0.933, 0.167)
        assert value == 100.0 * (0.167 - 0.933) / 0.933
        assert abs(value - -82.1) < 0.05

    def test_equal_accuracies_give_zero(self):
        for x in (0.25, 0.5, 1.0):
            assert accuracy_variation(x, x) == 0.0

    def test_zero_baseline_rejected(self):
        with pytest.raises(UndefinedVariationError):
            accuracy_variation(0.0, 0.5)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            accuracy_variation(1.5, 0.5)

    def test_sign_tracks_direction(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            b = rng.uniform(0.05, 1.0)
            t = rng.uniform(0.0, 1.0)
            v = accuracy_variation(b, t)
            assert (v > 0) == (t > b)
            assert (v == 0) == (t == b)


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(1, "a") == derive_seed(1, "a")
        assert derive_seed(1, "a") != derive_seed(1, "b")
        assert derive_seed(1, "a") != derive_seed(2, "a")
        assert 0 <= derive_seed("x") < 2**63


class TestRunPair:
    def test_rejects_same_dataset(self):
        a, _ = tiny_datasets()
        with pytest.raises(ValueError):
            run_pair(a, a, FAST, seed=0)

    def test_completes_and_records(self):
        a, b = tiny_datasets()
        result = run_pair(a, b, FAST, seed=1)
        assert result.source == "A" and result.target == "B"
        assert 0.0 <= result.baseline_accuracy <= 1.0
        assert 0.0 <= result.transfer_accuracy <= 1.0
        if result.baseline_accuracy > 0:
            assert result.variation_percent == accuracy_variation(
                result.baseline_accuracy, result.transfer_accuracy
            )
        assert set(result.derived_seeds) == {
            "baseline_init",
            "baseline_train",
            "source_init",
            "source_train",
            "head",
            "finetune_train",
        }

    def test_zero_epochs_transfer_is_headswapped_pretrained(self):
        a, b = tiny_datasets()
        cfg = TrainConfig(epochs=0, batch_size=8, seed=0)
        result = run_pair(a, b, cfg, seed=2)
        # with no training at all, both sides are untrained models
        pre = build_model(a.class_count, seed=result.derived_seeds["source_init"])
        swapped = swap_head(pre, b.class_count, result.derived_seeds["head"])
        assert result.transfer_accuracy == evaluate(swapped, b.test)

    def test_deterministic(self):
        a, b = tiny_datasets()
        r1 = run_pair(a, b, FAST, seed=3)
        r2 = run_pair(a, b, FAST, seed=3)
        assert r1 == r2

    def test_baseline_depends_only_on_target(self):
        a, b, c = tiny_datasets(3)
        r1 = run_pair(a, c, FAST, seed=4)
        r2 = run_pair(b, c, FAST, seed=4)
        assert r1.baseline_accuracy == r2.baseline_accuracy


class TestRunMatrix:
    def test_cell_counts(self, tmp_path):
        datasets = tiny_datasets(2)
        matrix = run_matrix(datasets, FAST, seeds=[0], out_dir=tmp_path / "r2")
        assert len(matrix.cells) == 2
        datasets = tiny_datasets(4)
        matrix = run_matrix(datasets, FAST, seeds=[0], out_dir=tmp_path / "r4")
        assert len(matrix.cells) == 12
        assert not matrix.failures

    def test_resume_skips_completed_cells(self, tmp_path, monkeypatch):
        datasets = tiny_datasets(2)
        out = tmp_path / "res"
        first = run_matrix(datasets, FAST, seeds=[0], out_dir=out)
        cell_files = sorted((out / "cells").glob("*.json"))
        before = {p.name: p.read_bytes() for p in cell_files}

        def boom(*args, **kwargs):
            raise AssertionError("run_pair called during resume")

        monkeypatch.setattr(harness, "run_pair", boom)
        second = run_matrix(datasets, FAST, seeds=[0], out_dir=out)
        after = {p.name: p.read_bytes() for p in sorted((out / "cells").glob("*.json"))}
        assert before == after
        assert second.cells == first.cells

    def test_failure_isolation(self, tmp_path, monkeypatch):
        datasets = tiny_datasets(2)
        real = harness.run_pair

        def flaky(source, target, config, seed, _cache=None):
            if source.name == "A":
                raise RuntimeError("injected failure")
            return real(source, target, config, seed, _cache=_cache)

        monkeypatch.setattr(harness, "run_pair", flaky)
        out = tmp_path / "fail"
        matrix = run_matrix(datasets, FAST, seeds=[0], out_dir=out)
        assert ("B", "A") in matrix.cells
        assert ("A", "B") in matrix.failures
        assert "injected failure" in matrix.failures[("A", "B")]
        # failed marker on disk, retried on the next run
        assert list((out / "cells").glob("*.failed"))
        monkeypatch.setattr(harness, "run_pair", real)
        retried = run_matrix(datasets, FAST, seeds=[0], out_dir=out)
        assert not retried.failures
        assert not list((out / "cells").glob("*.failed"))

    def test_workers_give_identical_results(self, tmp_path):
        datasets = tiny_datasets(3)
        m1 = run_matrix(datasets, FAST, seeds=[0], out_dir=None, workers=1)
        m2 = run_matrix(datasets, FAST, seeds=[0], out_dir=None, workers=3)
        assert m1.cells == m2.cells

    def test_load_matrix_results_round_trip(self, tmp_path):
        datasets = tiny_datasets(2)
        out = tmp_path / "rt"
        matrix = run_matrix(datasets, FAST, seeds=[0], out_dir=out)
        loaded = load_matrix_results(out)
        assert loaded.cells == matrix.cells

    def test_multi_seed_cells_average(self, tmp_path):
        datasets = tiny_datasets(2)
        matrix = run_matrix(datasets, FAST, seeds=[0, 1])
        cell = matrix.cells[("A", "B")]
        assert cell["seeds"] == [0, 1]
        assert len(cell["results"]) == 2
        mean = sum(r["transfer_accuracy"] for r in cell["results"]) / 2
        assert cell["transfer_accuracy"] == mean

    def test_dataset_order_permutes_consistently(self):
        datasets = tiny_datasets(3)
        m1 = run_matrix(datasets, FAST, seeds=[0])
        m2 = run_matrix(list(reversed(datasets)), FAST, seeds=[0])
        assert m2.names == tuple(reversed(m1.names))
        assert m1.cells == m2.cells


class TestAggregate:
    def test_single_source_column(self):
        out = aggregate({"t": {"s": 0.7}})
        assert out["t"] == (0.7, 0.7, 0.7)

    def test_odd_column(self):
        out = aggregate({"t": {"a": 0.2, "b": 0.4, "c": 0.9}})
        assert out["t"] == (0.2, 0.4, 0.9)

    def test_even_column_median_is_middle_mean(self):
        out = aggregate({"t": {"a": 0.1, "b": 0.3, "c": 0.5, "d": 0.7}})
        assert out["t"] == (0.1, 0.4, 0.7)

    def test_empty_column_absent(self):
        assert aggregate({"t": {}}) == {}


def ranking(target, *ordered):
    return SourceRanking(
        target=target, ranked=tuple((name, float(k)) for k, name in enumerate(ordered))
    )


class TestCompareSelection:
    def test_all_equal_column_is_tie_for_any_seed(self):
        columns = {"t": {"a": 0.6, "b": 0.6, "c": 0.6}}
        rankings = {"t": ranking("t", "a", "b", "c")}
        for seed in (0, 1, 99):
            report = compare_selection(columns, rankings, iterations=100, seed=seed)
            assert report["targets"]["t"]["outcome"] == "tie"
            assert abs(report["targets"]["t"]["random_mean_sampled"] - 0.6) < 1e-9
            assert report["targets"]["t"]["random_mean_exact"] == 0.6

    def test_strictly_best_rank1_wins(self):
        columns = {"t": {"a": 0.9, "b": 0.5, "c": 0.1}}
        rankings = {"t": ranking("t", "a", "b", "c")}
        report = compare_selection(columns, rankings, iterations=500, seed=7)
        assert report["targets"]["t"]["outcome"] == "win"
        assert report["totals"] == {"wins": 1, "ties": 0, "losses": 0}
        smart = report["targets"]["t"]["smart"]
        assert smart["rank1"] == {"source": "a", "accuracy": 0.9}
        assert smart["rank2"] == {"source": "b", "accuracy": 0.5}
        assert smart["rank3"] == {"source": "c", "accuracy": 0.1}

    def test_missing_ranks_are_none(self):
        columns = {"t": {"a": 0.4}}
        rankings = {"t": ranking("t", "a")}
        report = compare_selection(columns, rankings, iterations=10, seed=0)
        smart = report["targets"]["t"]["smart"]
        assert smart["rank2"] is None and smart["rank3"] is None

    def test_reproducible_for_seed(self):
        rng = np.random.default_rng(1)
        columns = {
            t: {s: float(rng.uniform()) for s in "abc"} for t in ("t1", "t2")
        }
        rankings = {t: ranking(t, "a", "b", "c") for t in columns}
        r1 = compare_selection(columns, rankings, iterations=250, seed=5)
        r2 = compare_selection(columns, rankings, iterations=250, seed=5)
        assert r1 == r2

    def test_sampled_mean_approaches_exact_mean(self):
        columns = {"t": {"a": 0.0, "b": 1.0}}
        rankings = {"t": ranking("t", "a", "b")}
        report = compare_selection(columns, rankings, iterations=20000, seed=3)
        t = report["targets"]["t"]
        assert abs(t["random_mean_sampled"] - t["random_mean_exact"]) < 0.02


class TestOutputs:
    def test_variation_csv_layout(self, tmp_path):
        matrix = VariationMatrix(names=("A", "B"))
        matrix.cells[("A", "B")] = {
            "source": "A", "target": "B", "seeds": [0],
            "baseline_accuracy": 0.5, "transfer_accuracy": 0.75,
            "variation_percent": 50.0, "results": [],
        }
        path = tmp_path / "vm.csv"
        write_variation_csv(matrix, path)
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0] == ["", "A", "B"]
        assert rows[1][0] == "A" and rows[1][1] == ""  # diagonal empty
        assert float(rows[1][2]) == 50.0
        assert rows[2][2] == ""  # diagonal
        assert rows[2][1] == ""  # missing cell

    def test_write_report_outputs(self, tmp_path):
        datasets = tiny_datasets(3)
        matrix = run_matrix(datasets, FAST, seeds=[0])
        sim = SimilarityMatrix(
            ("A", "B", "C"),
            np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]),
        )
        out = tmp_path / "report.json"
        agg = tmp_path / "aggregate.csv"
        report = write_report(matrix, sim, out, aggregate_path=agg, iterations=50)
        data = json.loads(out.read_text())
        assert data["totals"] == report["totals"]
        assert set(data["targets"]) == {"A", "B", "C"}
        rows = list(csv.reader(agg.read_text().splitlines()))
        assert rows[0] == ["target", "min", "median", "max"]
        assert len(rows) == 4

    def test_floats_printed_with_17_digits(self, tmp_path):
        from tstransfer.textfmt import fmt17

        assert fmt17(0.1) == "0.10000000000000001"
        assert float(fmt17(1 / 3)) == 1 / 3
        matrix = VariationMatrix(names=("A", "B"))
        matrix.cells[("A", "B")] = {
            "source": "A", "target": "B", "seeds": [0],
            "baseline_accuracy": 1 / 3, "transfer_accuracy": 2 / 3,
            "variation_percent": 100.0, "results": [],
        }
        path = tmp_path / "vm.csv"
        write_variation_csv(matrix, path)
        assert "100" in path.read_text()
