"""Tests for the SNR sweep runner and crossover detection."""

import numpy as np
import pandas as pd
import pytest

from core.config import snr_range
from processing.sweep_runner import SWEEP_COLUMNS, SweepRunner, find_crossover, run_sweep


class TestSweepRunner:

    def test_table_layout(self, short_lfm, short_chain):
        table = run_sweep(short_lfm, [0.0, -12.0, 15.5], short_chain, seeds_per_point=2)
        assert list(table.columns) == SWEEP_COLUMNS
        assert table["snr_db"].tolist() == [-12.0, 0.0, 15.5]
        assert (table["n_seeds"] == 2).all()
        np.testing.assert_allclose(
            table["improvement_db"],
            10 * np.log10(table["mse_before"] / table["mse_after"]),
        )

    def test_crossover_present(self, short_lfm, short_chain):
        table = run_sweep(short_lfm, [-12.0, 0.0, 15.5], short_chain, seeds_per_point=1)
        assert table.loc[table["snr_db"] == -12.0, "improvement_db"].item() > 3.0
        assert find_crossover(table) == 15.5

    def test_input_error_falls_with_snr(self, short_lfm, short_chain):
        table = run_sweep(short_lfm, [6.0, -12.0, 0.0, -6.0], short_chain, seeds_per_point=2)
        assert np.all(np.diff(table["mse_before"].to_numpy()) < 0)

    def test_order_independent(self, short_lfm, short_chain):
        forward = run_sweep(short_lfm, [-6.0, 3.0], short_chain, seeds_per_point=2)
        backward = run_sweep(short_lfm, [3.0, -6.0], short_chain, seeds_per_point=2)
        pd.testing.assert_frame_equal(forward, backward)

    def test_seeds_start_at_config_seed(self, short_chain):
        runner = SweepRunner(short_chain.model_copy(update={"seed": 10}))
        assert runner.seeds(3) == [10, 11, 12]

    def test_empty_snr_list(self, short_lfm, short_chain):
        with pytest.raises(ValueError, match="non-empty"):
            SweepRunner(short_chain).run(short_lfm, [])

    def test_bad_seed_count(self, short_lfm, short_chain):
        with pytest.raises(ValueError, match="seeds_per_point"):
            SweepRunner(short_chain).run(short_lfm, [0.0], seeds_per_point=0)

    @pytest.mark.slow
    def test_parallel_matches_serial(self, short_lfm, short_chain):
        serial = SweepRunner(short_chain, n_jobs=1).run(short_lfm, [-3.0, 6.0], seeds_per_point=2)
        parallel = SweepRunner(short_chain, n_jobs=2).run(short_lfm, [-3.0, 6.0], seeds_per_point=2)
        pd.testing.assert_frame_equal(serial, parallel)

    @pytest.mark.slow
    def test_full_grid(self, short_lfm, short_chain):
        snr_list = snr_range(-12.0, 15.5, 0.5)
        table = run_sweep(short_lfm, snr_list, short_chain, seeds_per_point=1)
        assert len(table) == 56
        low = table[table["snr_db"] <= 3.0]
        assert (low["mse_after"] < low["mse_before"]).all()
        crossover = find_crossover(table)
        assert crossover is not None and 3.0 < crossover <= 15.5


class TestFindCrossover:

    def test_first_worse_point(self):
        table = pd.DataFrame({
            "snr_db": [0.0, 5.0, 10.0, 15.0],
            "mse_before": [0.5, 0.25, 0.1, 0.03],
            "mse_after": [0.2, 0.1, 0.1, 0.05],
        })
        assert find_crossover(table) == 10.0

    def test_never_worse(self):
        table = pd.DataFrame({"snr_db": [0.0], "mse_before": [0.5], "mse_after": [0.2]})
        assert find_crossover(table) is None
