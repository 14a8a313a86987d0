# ABOUTME: Experiment-scale checks: held-out corner accuracy, system-level error, drive interpolation, runtime.
# ABOUTME: Every test here is marked slow; each fixture trains all five models for 800 epochs.

import pandas as pd
import pytest

from cellgnn.benchmarks import BUNDLED, benchmark
from cellgnn.cli import main
from cellgnn.dataset import Task, build_dataset, corner_grid, fit_normalization, stimulus_grid
from cellgnn.gnn import Checkpoint, TrainConfig, predict_batch, split_validation, train, write_checkpoint
from cellgnn.libgen import ModelSource, OracleSource, build_library, library_grid, metrics
from cellgnn.sta import clock_frequency, compare_libraries
from cellgnn.technology import system_eval_corner

pytestmark = pytest.mark.slow

ACCURACY_CELLS = ["INVX1", "INVX2", "NAND2X1", "NOR2X1", "AND2X1", "XOR2X1"]
# Every cell the bundled benchmarks instantiate.
SYSTEM_CELLS = ["INVX1", "NAND2X1", "NOR2X1", "AND2X1", "OR2X1", "XOR2X1", "AOI21X1", "OAI21X1"]
MAPE_LIMIT = {
    Task.DELAY: 5.0,
    Task.CAPACITANCE: 5.0,
    Task.LEAKAGE: 5.0,
    Task.FLIP_POWER: 8.0,
    Task.NON_FLIP_POWER: 8.0,
}
TRAIN_CONFIG = TrainConfig(batch_size=512, epochs=800, lr0=1e-3, lr_halving_period=200, hidden=64, valid_interval=50)


def train_models(cells, corners, stimulus):
    """One best-validation checkpoint per task, trained on the oracle labels of the given corners."""
    datasets = build_dataset(cells, corners, stimulus, list(Task))
    models = {}
    for task in Task:
        norm = fit_normalization(datasets[task])
        graphs = [norm.apply(s).graph for s in datasets[task]]
        fit_set, valid_set = split_validation(graphs, 0.1, seed=task.file_id)
        result = train(fit_set, valid_set, TRAIN_CONFIG)
        models[task] = Checkpoint(result.params, norm, None, result.last_epoch)
    return models


class TestHeldOutCorners:
    """Tests for accuracy on corners absent from training."""

    @pytest.mark.parametrize("task", list(Task), ids=lambda task: task.value)
    def test_held_out_mape(self, accuracy_models, held_out_sets, task):
        samples = held_out_sets[task]
        checkpoint = accuracy_models[task]
        pred = predict_batch(checkpoint.params, checkpoint.norm, [s.graph for s in samples])
        report = metrics(pred, [s.target for s in samples], [s.provenance.cell for s in samples], task.value)
        print(f"\n{task.value}: held-out MAPE {report.mape:.2f}% over {report.count} samples")
        assert report.mape <= MAPE_LIMIT[task]


class TestSystemLevel:
    """Tests for benchmark timing and power under a predicted library."""

    @pytest.mark.parametrize("name", BUNDLED)
    def test_benchmark_errors(self, system_libraries, name):
        truth, pred = system_libraries
        netlist = benchmark(name)
        comparison = compare_libraries(netlist, truth, pred, clock_frequency(netlist.period, truth))
        print(f"\n{name}: {comparison.as_row()}")
        assert comparison.wns_delta <= 0.02 * netlist.period
        assert comparison.leakage_error <= 5.0
        assert comparison.dynamic_error <= 5.0


class TestCommands:
    """Tests for the interp-drive and bench-runtime experiments."""

    def test_interpolated_drives_never_hurt(self, tmp_path):
        assert main(["--out", str(tmp_path), "interp-drive", "--factors", "1.05,1.1"]) == 0
        table = pd.read_csv(tmp_path / "interp" / "interp_drive.csv")
        assert set(table["netlist"]) == {"inv-chain-32", "rca8", "rca16", "mult4x4"}
        assert (table["ppa_impro_pct"] >= 0).all()
        best = table.groupby("netlist")["ppa_impro_pct"].max()
        assert (best[["rca8", "rca16", "mult4x4"]] > 0).all()
        print(f"\n{table[['netlist', 'period_factor', 'ppa_impro_pct']].to_string(index=False)}")

    def test_full_library_speedup(self, system_models, tmp_path):
        models = tmp_path / "models"
        for task, checkpoint in system_models.items():
            write_checkpoint(models / f"{task.value}.cgnn", checkpoint)
        assert main(["--out", str(tmp_path), "bench-runtime", "--models", str(models)]) == 0
        table = pd.read_csv(tmp_path / "runtime" / "bench_runtime.csv")
        total = table.loc[table["item"] == "total"].iloc[0]
        print(f"\nTotal speedup {total['speedup']:.1f}x over {int(total['queries'])} queries")
        assert total["speedup"] >= 10.0


@pytest.fixture(scope="module")
def accuracy_models(catalog):
    """Models trained on the 27-corner grid with a 4x4 stimulus grid."""
    stimulus = stimulus_grid("silicon45", 4, 4)
    return train_models(catalog.subset(ACCURACY_CELLS), corner_grid("silicon45", 3), stimulus)


@pytest.fixture(scope="module")
def held_out_sets(catalog):
    """Oracle labels on the 64-corner grid; only its corners at the range ends overlap training."""
    stimulus = stimulus_grid("silicon45", 4, 4)
    return build_dataset(catalog.subset(ACCURACY_CELLS), corner_grid("silicon45", 4), stimulus, list(Task))


@pytest.fixture(scope="module")
def system_models(catalog):
    stimulus = stimulus_grid("silicon45", 4, 4)
    return train_models(catalog.subset(SYSTEM_CELLS), corner_grid("silicon45", 3), stimulus)


@pytest.fixture(scope="module")
def system_libraries(catalog, system_models):
    """(oracle, model) libraries over the benchmark cells at the unseen evaluation corner."""
    corner = system_eval_corner("silicon45")
    cells = catalog.subset(SYSTEM_CELLS)
    slews, loads = library_grid("silicon45")
    truth = build_library(OracleSource(), cells, corner, slews, loads, name="truth")
    pred = build_library(ModelSource(system_models), cells, corner, slews, loads, name="pred")
    return truth, pred
