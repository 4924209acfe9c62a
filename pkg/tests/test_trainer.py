import json

import numpy as np
import pytest

from dtdl.dictionary_learner import Dictionary, collect_features, incoherence_value
from dtdl.lstm_ae import LstmAeParams, autoencode, init_params
from dtdl.model_io import save_model
from dtdl.seeding import spawn_rng
from dtdl.signal_data import (
    ApplianceModel,
    ApplianceState,
    Scaler,
    SyntheticSpec,
    make_windows,
    split_dataset,
    synth_household,
)
from dtdl.sparse_coder import AdmmOptions, SparseCodeMatrix
from dtdl.trainer import (
    DtdlModel,
    HyperParams,
    evaluate_objective,
    objective_breakdown,
    train,
    validate_grid,
)


def small_spec(seed=3, duration=420):
    return SyntheticSpec(
        device_models=[
            ApplianceModel("pump", [ApplianceState(0.0, 30), ApplianceState(120.0, 12)]),
            ApplianceModel("lamp", [ApplianceState(0.0, 25), ApplianceState(60.0, 18)]),
        ],
        duration=duration,
        noise_std=1.0,
        seed=seed,
    )


def small_dataset(omega=6, duration=420):
    signals, _ = synth_household(small_spec(duration=duration), omega)
    ds = make_windows(signals, omega)
    train_ds, _, _ = split_dataset(ds, ds.window_count - 10)
    return train_ds


def quick_hp(**kw):
    base = dict(seed=5, omega=6, m=3, atoms_per_device=2, max_outer_iters=2,
                epochs_per_block=1, epsilon=1e-6, lambda1=1e-3, lambda4=1e-4,
                warmup_epochs=2)
    base.update(kw)
    return HyperParams(**base)


def zero_lstm(m):
    return LstmAeParams(m, np.zeros(4 * m), np.zeros((4 * m, m)), np.zeros(4 * m),
                        np.zeros(m), 0.0)


class TestHyperParams:
    def test_shipped_defaults_are_validated_configuration(self):
        hp = HyperParams()
        assert hp.eta == 0.01
        assert hp.epsilon == 0.05
        assert hp.atoms_per_device == 20
        assert hp.m == 7
        assert hp.omega == 14
        assert (hp.lambda2, hp.lambda3, hp.lambda4) == (0.4, 1.2, 0.6)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            HyperParams(eta=0.0)
        with pytest.raises(ValueError):
            HyperParams(lambda2=-0.1)
        with pytest.raises(ValueError):
            HyperParams(smoothness_mode="soft")


class TestEvaluateObjective:
    def _state(self, m=3, omega=6):
        rng = spawn_rng(11, "test", "objective")
        ds = small_dataset(omega)
        K, L = ds.window_count, ds.device_count
        params = init_params(m, rng)
        D = rng.normal(size=(m, 2 * L))
        D /= np.maximum(np.linalg.norm(D, axis=0), 1.0)
        dictionary = Dictionary(m, [2] * L, D)
        codes = SparseCodeMatrix([2] * L, K, L, np.zeros((2 * L, K * L)))
        for i in range(L):
            codes.A[codes.block_slice(i), codes.device_columns(i)] = \
                rng.normal(size=(2, K))
        return ds, params, dictionary, codes

    def test_zero_params_zero_regularizer(self):
        ds, _, dictionary, codes = self._state()
        hp = quick_hp()
        report = objective_breakdown(zero_lstm(3), dictionary, ds, codes, hp)
        assert report.regularization == 0.0

    def test_zero_codes_zero_encoder_gives_zero_fit_and_smoothness(self):
        ds, _, dictionary, codes = self._state()
        codes.A[:] = 0.0
        hp = quick_hp()
        report = objective_breakdown(zero_lstm(3), dictionary, ds, codes, hp)
        assert report.dictionary_fit == 0.0
        assert report.smoothness_residual == 0.0

    def test_terms_match_independent_recomputation(self):
        ds, params, dictionary, codes = self._state()
        hp = quick_hp(lambda1=0.07, lambda2=0.3, lambda3=0.9, lambda4=0.2)
        report = objective_breakdown(params, dictionary, ds, codes, hp)

        K, L = ds.window_count, ds.device_count
        fit = 0.0
        recon = 0.0
        for k in range(K):
            for i in range(L):
                snippet = ds.scaler.normalize(ds.device_snippets[k, i])
                feature, rec, _ = autoencode(params, snippet)
                col = codes.A[:, k * L + i]
                r = feature - dictionary.D @ col
                fit += float(r @ r) + hp.lambda1 * float(np.sum(np.abs(col)))
                recon += float(np.sum((rec - snippet) ** 2))
        fit /= K * L
        recon /= K * L
        incoh = incoherence_value(dictionary)
        reg = params.weight_norm_sq()
        smooth = 0.0
        for i in range(L):
            for k in range(K - 1):
                smooth += abs(codes.A[:, k * L + i].sum()
                              - codes.A[:, (k + 1) * L + i].sum())
        smooth /= K
        assert report.dictionary_fit == pytest.approx(fit, rel=1e-10)
        assert report.reconstruction == pytest.approx(recon, rel=1e-10)
        assert report.incoherence == pytest.approx(incoh, rel=1e-10)
        assert report.regularization == pytest.approx(reg, rel=1e-10)
        assert report.smoothness_residual == pytest.approx(smooth, rel=1e-10)
        total = fit + hp.lambda2 * incoh + hp.lambda3 * recon + hp.lambda4 * reg
        assert report.total == pytest.approx(total, rel=1e-10)


class TestTrain:
    def test_single_outer_iteration_logs_once(self):
        ds = small_dataset()
        model = train(ds, quick_hp(max_outer_iters=1))
        assert len(model.training_log) == 1
        assert not model.converged

    def test_requires_two_windows(self):
        signals, _ = synth_household(small_spec(duration=8), 6)
        ds = make_windows(signals, 6)
        assert ds.window_count == 1
        with pytest.raises(ValueError, match="at least 2"):
            train(ds, quick_hp())

    def test_omega_mismatch_rejected(self):
        ds = small_dataset(omega=6)
        with pytest.raises(ValueError, match="omega"):
            train(ds, quick_hp(omega=8))

    def test_bit_identical_reruns(self, tmp_path):
        ds = small_dataset()
        hp = quick_hp(max_outer_iters=2)
        a = train(ds, hp)
        b = train(ds, hp)
        save_model(a, tmp_path / "a.json")
        save_model(b, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_log_carries_block_objectives_and_is_finite(self):
        ds = small_dataset()
        model = train(ds, quick_hp(max_outer_iters=3))
        for row in model.training_log:
            assert row["lstm_obj_after"] <= row["lstm_obj_before"] + 1e-12
            assert row["dict_obj_after"] <= row["dict_obj_before"] + 1e-8
            assert row["code_obj_after"] <= row["code_obj_before"] + 1e-8
            for key in ("J", "J1", "J2", "J3", "J4", "smoothness_residual", "dict_delta"):
                assert np.isfinite(row[key])

    def test_convergence_threshold_stops_early(self):
        ds = small_dataset()
        model = train(ds, quick_hp(max_outer_iters=50, epsilon=10.0))
        assert model.converged
        assert len(model.training_log) == 1

    def test_evaluate_objective_uses_final_codes(self):
        ds = small_dataset()
        model = train(ds, quick_hp())
        report = evaluate_objective(model, ds)
        assert np.isfinite(report.total)

    def test_dual_ascent_path_when_lambda2_zero(self):
        ds = small_dataset()
        model = train(ds, quick_hp(lambda2=0.0, max_outer_iters=2))
        assert np.all(model.dictionary.column_norms() <= 1 + 1e-9)
        for row in model.training_log:
            assert np.isnan(row["dict_step"])  # closed-form path, no gradient step


class TestValidateGrid:
    def test_single_cell(self):
        signals, _ = synth_household(small_spec(duration=360), 6)
        rows = validate_grid(signals, quick_hp(max_outer_iters=1, warmup_epochs=1),
                             m_values=[3], omega_values=[6],
                             lambda_values=[(0.2, 1.0, 0.0)])
        assert len(rows) == 1
        assert set(rows[0]) == {"m", "omega", "lambda2", "lambda3", "lambda4",
                                "val_acc", "converged"}

    def test_cells_reproducible_independently(self):
        signals, _ = synth_household(small_spec(duration=360), 6)
        hp = quick_hp(max_outer_iters=1, warmup_epochs=1)
        rows = validate_grid(signals, hp, m_values=[2, 3], omega_values=[6],
                             lambda_values=[(0.2, 1.0, 0.0)])
        assert len(rows) == 2
        again = validate_grid(signals, hp, m_values=[3], omega_values=[6],
                              lambda_values=[(0.2, 1.0, 0.0)])
        cell = [r for r in rows if r["m"] == 3][0]
        assert again[0]["val_acc"] == pytest.approx(cell["val_acc"], rel=1e-12)
