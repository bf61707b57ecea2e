import numpy as np
import pytest

from fpnet import accounting
from fpnet.accounting import (PHASES, CostLedger, add_macs,
                              cholesky_solve_macs, matmul_macs, note_matrices,
                              track)
from fpnet.bench import (METHODS, bottleneck_sweep, derive_layer_seeds,
                         derive_noise_seed, fewshot_sweep, fit_method,
                         mlp_specs, rows_to_csv, run_benchmark)
from fpnet.core import RidgeConfig, TargetGenSpec
from fpnet.data import synthetic_gaussian_task
from fpnet.layers import LayerSpec, fit_network
from fpnet.linalg import SeededRng


class TestLedger:
    def test_phases_and_total(self):
        led = CostLedger()
        led.add_macs("gram", 10)
        led.add_macs("gram", 5)
        led.add_macs("solve", 1)
        assert led.macs["gram"] == 15
        assert led.total_macs == 16

    def test_unknown_phase(self):
        with pytest.raises(ValueError):
            CostLedger().add_macs("backward", 1)

    def test_peak_tracks_maximum(self):
        led = CostLedger()
        led.note_matrices(np.zeros((4, 4)))          # 128 bytes
        led.note_matrices(np.zeros(2), np.zeros(2))  # 32 bytes, not a new peak
        assert led.peak_matrix_bytes == 128

    def test_none_entries_ignored(self):
        led = CostLedger()
        led.note_matrices(None, np.zeros(1))
        assert led.peak_matrix_bytes == 8

    def test_track_installs_and_restores(self):
        outer = CostLedger()
        with track(outer):
            add_macs("forward", 3)
            inner = CostLedger()
            with track(inner):
                add_macs("forward", 5)
            add_macs("forward", 1)
        add_macs("forward", 100)  # no active ledger: dropped
        note_matrices(np.zeros(1000))
        assert outer.macs["forward"] == 4
        assert inner.macs["forward"] == 5
        assert outer.peak_matrix_bytes == 0

    def test_formulas(self):
        assert matmul_macs(3, 4, 5) == 60
        assert cholesky_solve_macs(6, 2) == 36 + 72

    def test_solve_cost_cubic_bound(self):
        for n in (1, 3, 16, 100, 1000):
            for k in (1, 2, n, 3 * n):
                assert cholesky_solve_macs(n, k) <= 2 * max(n, k) ** 3


class TestInstrumentation:
    def _task(self, n=512, seed=31):
        rng = SeededRng(seed)
        return synthetic_gaussian_task(n, 32, 4, 3.0, rng)

    def _specs(self, width=16):
        return [LayerSpec("dense", out_channels=width, activation="relu",
                          target=TargetGenSpec(g="sign", q_seed=0, u_seed=1),
                          ridge=RidgeConfig(lam=10.0)),
                LayerSpec("output", ridge=RidgeConfig(lam=1.0))]

    def test_gram_macs_near_analytic(self):
        train = self._task()
        led = CostLedger()
        with track(led):
            fit_network(self._specs()[:1] + [LayerSpec("output")], train)
        # hidden layer: N*32*32 for the gram plus N*32*16 for the cross term;
        # output layer adds N*17*17 + N*17*4. All within 2x of N*d^2.
        analytic = 512 * 32 * 32
        assert led.macs["gram"] >= analytic
        assert led.macs["gram"] <= 2 * analytic

    def test_solve_macs_within_documented_bound(self):
        train = self._task()
        led = CostLedger()
        with track(led):
            fit_network(self._specs(), train)
        assert 0 < led.macs["solve"] <= 2 * (2 * 32 ** 3)  # two layers

    def test_all_phases_populated(self):
        train = self._task()
        _, led = run_benchmark(self._specs(), train, self._task(128, 32))
        for phase in PHASES:
            assert led.macs[phase] > 0, phase

    def test_peak_bytes_independent_of_n(self):
        small = self._task(n=1000, seed=33)
        large = self._task(n=2000, seed=34)
        peaks = []
        for train in (small, large):
            led = CostLedger()
            with track(led):
                fit_network(self._specs(), train, batch_size=128)
            peaks.append(led.peak_matrix_bytes)
        assert peaks[0] > 0
        assert abs(peaks[0] - peaks[1]) / peaks[0] < 0.01


class TestSeeds:
    def test_layer_seeds_distinct_and_stable(self):
        seen = set()
        for master in range(5):
            for layer in range(6):
                pair = derive_layer_seeds(master, layer)
                assert pair == derive_layer_seeds(master, layer)
                seen.add(pair)
        assert len(seen) == 30

    def test_noise_seed_distinct_from_layer_seeds(self):
        layer_seeds = {s for l in range(8) for s in derive_layer_seeds(3, l)}
        assert derive_noise_seed(3) not in layer_seeds


class TestHarness:
    def _splits(self):
        rng = SeededRng(40)
        train = synthetic_gaussian_task(600, 16, 4, 3.5, rng)
        test = synthetic_gaussian_task(300, 16, 4, 3.5, rng)
        return train, test

    def test_mlp_specs_shape(self):
        specs = mlp_specs([64, 32], lam_hidden=10.0, lam_output=1.0, seed=2)
        assert [s.kind for s in specs] == ["dense", "dense", "output"]
        assert specs[0].target.q_seed != specs[1].target.q_seed
        assert specs[0].effective_ridge().lam == 10.0
        assert specs[2].effective_ridge().lam == 1.0

    def test_run_benchmark_report(self):
        train, test = self._splits()
        report, ledger = run_benchmark(mlp_specs([32], seed=1), train, test,
                                       seed=1)
        assert report.n == 300 and report.seed == 1
        assert report.accuracy > 0.8
        assert ledger.total_macs > 0

    def test_fit_method_baseline_dispatch(self):
        train, _ = self._splits()
        specs = mlp_specs([16], seed=0)
        rf = fit_method("random_features", specs, train)
        assert np.array_equal(rf.layers[0].w, rf.layers[0].q)
        with pytest.raises(ValueError):
            fit_method("gradient_descent", specs, train)

    def test_bottleneck_sweep_rows(self, tmp_path):
        train, test = self._splits()
        rows = bottleneck_sweep(train, test, widths=(8, 16),
                                base_widths=(24,), seed=0, methods=METHODS)
        assert len(rows) == len(METHODS) * 2
        assert {r["method"] for r in rows} == set(METHODS)
        assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
        path = tmp_path / "sweep.csv"
        rows_to_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "method,width,accuracy,auc_macro,aupr_macro,n,seed,total_macs"
        assert len(lines) == len(rows) + 1

    def test_fewshot_sweep_rows(self):
        train, test = self._splits()
        rows = fewshot_sweep(train, test, shots=(5, 10), seeds=(0, 1),
                             hidden=(16,))
        assert len(rows) == 4
        assert {(r["shots"], r["seed"]) for r in rows} == {(5, 0), (5, 1),
                                                           (10, 0), (10, 1)}
        for row in rows:
            assert row["n"] == 300

    def test_rows_to_csv_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            rows_to_csv([], tmp_path / "x.csv")
