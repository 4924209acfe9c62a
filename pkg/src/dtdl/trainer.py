"""Alternating training loop: LSTM pass, dictionary update, sparse-code solve,
repeated until the dictionary settles.

Each outer iteration runs the three block optimizers in order. Every block is
guarded so it cannot increase its own sub-objective: the LSTM pass retries
with a halved learning rate, the dictionary step is either the exact
constrained minimizer (no incoherence) or a halving-guarded projected
gradient step, and a code solve is only accepted if it does not worsen the
coding objective it minimizes. Convergence is declared when the mean absolute
change across dictionary entries falls below epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import disaggregator
from .dictionary_learner import (
    Dictionary,
    dual_ascent,
    fit_value,
    guarded_incoherence_step,
    incoherence_value,
    init_dictionary,
    lipschitz_step,
    project_columns,
)
from .lstm_ae import LstmAeParams, autoencode, guarded_update, init_params
from .seeding import spawn_rng
from .signal_data import Scaler, WindowedDataset, make_windows, split_dataset
from .sparse_coder import (
    AdmmOptions,
    SmoothnessMatrix,
    SparseCodeMatrix,
    build_G,
    solve_training_codes,
)


class NumericAbort(RuntimeError):
    """A block produced a non-finite value; carries the offending block name."""

    def __init__(self, block: str, detail: str = ""):
        self.block = block
        super().__init__("non-finite value in %s block%s" % (block, ": " + detail if detail else ""))


@dataclass
class HyperParams:
    """Training weights and sizes. The shipped defaults are the validated
    configuration: eta 0.01, epsilon 0.05, 20 atoms per device, m 7,
    omega 14, (lambda2, lambda3, lambda4) = (0.4, 1.2, 0.6)."""

    lambda1: float = 0.1
    lambda2: float = 0.4
    lambda3: float = 1.2
    lambda4: float = 0.6
    eta: float = 0.01
    epsilon: float = 0.05
    omega: int = 14
    m: int = 7
    atoms_per_device: int = 20
    seed: int = 0
    max_outer_iters: int = 200
    epochs_per_block: int = 1
    smoothness_mode: str = "hard"  # "hard" enforces equal consecutive codes; "penalty" relaxes
    penalty_weight: float = 1.0
    dict_step: float = 1.0  # fraction of the inverse-curvature dictionary step
    warmup_epochs: int = 0  # reconstruction-only epochs before the alternation

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("objective weights must be nonnegative")
        if self.eta <= 0 or self.epsilon <= 0 or self.dict_step <= 0:
            raise ValueError("eta, epsilon, and dict_step must be positive")
        if self.omega < 2 or self.m < 1 or self.atoms_per_device < 1:
            raise ValueError("omega, m, and atoms_per_device must be positive sizes")
        if self.max_outer_iters < 1 or self.epochs_per_block < 1:
            raise ValueError("iteration counts must be at least 1")
        if self.smoothness_mode not in ("hard", "penalty"):
            raise ValueError("smoothness_mode must be 'hard' or 'penalty'")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be nonnegative")


@dataclass
class ObjectiveBreakdown:
    total: float
    dictionary_fit: float    # feature fit plus l1 term, averaged over devices and windows
    incoherence: float       # cross-device block coherence
    reconstruction: float    # auto-encoder reconstruction error
    regularization: float    # squared norms of all LSTM weights and biases
    smoothness_residual: float  # mean absolute change of per-device code mass


@dataclass
class DtdlModel:
    lstm: LstmAeParams
    dictionary: Dictionary
    scaler: Scaler
    hyper: HyperParams
    training_log: list[dict] = field(default_factory=list)
    device_names: list[str] = field(default_factory=list)
    converged: bool = False
    codes: SparseCodeMatrix | None = None  # final training codes; not serialized

    def __post_init__(self) -> None:
        if self.dictionary.d != self.lstm.m:
            raise ValueError("dictionary feature dimension must equal the LSTM hidden size")


def _check_finite(block: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericAbort(block)


def _encode_all(params: LstmAeParams, ds: WindowedDataset):
    """One pass computing features and reconstruction error for all snippets."""
    K, L = ds.window_count, ds.device_count
    features = np.zeros((params.m, K * L))
    recon_sq = 0.0
    for k in range(K):
        for i in range(L):
            snippet = ds.scaler.normalize(ds.device_snippets[k, i])
            feature, recon, _ = autoencode(params, snippet)
            features[:, k * L + i] = feature
            recon_sq += float(np.sum((recon - snippet) ** 2))
    return features, recon_sq / (K * L)


def lstm_targets(dictionary: Dictionary, codes: SparseCodeMatrix) -> np.ndarray:
    """Per-column encoder targets D_i a^i(k), shape (d, K*L)."""
    return dictionary.D @ codes.A


def total_lstm_loss(params: LstmAeParams, ds: WindowedDataset, targets: np.ndarray,
                    hp: HyperParams) -> float:
    """Dataset value of the LSTM block's objective (mean data terms plus the
    half-weighted parameter penalty whose gradient the updates follow)."""
    K, L = ds.window_count, ds.device_count
    total = 0.0
    for k in range(K):
        for i in range(L):
            snippet = ds.scaler.normalize(ds.device_snippets[k, i])
            feature, recon, _ = autoencode(params, snippet)
            total += float(np.sum((feature - targets[:, k * L + i]) ** 2))
            total += hp.lambda3 * float(np.sum((recon - snippet) ** 2))
    return total / (K * L) + 0.5 * hp.lambda4 * params.weight_norm_sq()


def _lstm_pass(params: LstmAeParams, ds: WindowedDataset, targets: np.ndarray,
               hp: HyperParams, eta: float) -> LstmAeParams:
    """epochs_per_block stochastic epochs over snippets in (k, i) ascending order."""
    K, L = ds.window_count, ds.device_count
    for _ in range(hp.epochs_per_block):
        for k in range(K):
            for i in range(L):
                snippet = ds.scaler.normalize(ds.device_snippets[k, i])
                params, _ = guarded_update(params, snippet, targets[:, k * L + i],
                                           hp.lambda4, hp.lambda3, eta)
    return params


def _lstm_block(params: LstmAeParams, ds: WindowedDataset, dictionary: Dictionary,
                codes: SparseCodeMatrix, hp: HyperParams, max_halvings: int = 20):
    """Run the LSTM pass, retrying with halved eta if the dataset loss rose."""
    targets = lstm_targets(dictionary, codes)
    entry_loss = total_lstm_loss(params, ds, targets, hp)
    eta = hp.eta
    for _ in range(max_halvings + 1):
        candidate = _lstm_pass(params, ds, targets, hp, eta)
        loss = total_lstm_loss(candidate, ds, targets, hp)
        if loss <= entry_loss + 1e-12:
            return candidate, eta, entry_loss, loss
        eta *= 0.5
    return params, 0.0, entry_loss, entry_loss


def coding_objective(dictionary: Dictionary, features: np.ndarray, codes: SparseCodeMatrix,
                     G: SmoothnessMatrix, hp: HyperParams) -> float:
    """The code block's objective: mean fit + l1, plus the coupling penalty
    (unit weight for hard mode, penalty_weight for penalty mode)."""
    n_cols = codes.A.shape[1]
    resid = features - dictionary.D @ codes.A
    value = float(np.sum(resid * resid)) + hp.lambda1 * float(np.sum(np.abs(codes.A)))
    coupling = hp.penalty_weight if hp.smoothness_mode == "penalty" else 1.0
    diffs = G.apply(codes.A)
    value += 0.5 * coupling * float(np.sum(diffs * diffs))
    return value / n_cols


def objective_breakdown(params: LstmAeParams, dictionary: Dictionary, ds: WindowedDataset,
                        codes: SparseCodeMatrix, hp: HyperParams) -> ObjectiveBreakdown:
    """All terms of the joint objective, plus the smoothness residual."""
    K, L = ds.window_count, ds.device_count
    features, recon_mean = _encode_all(params, ds)
    resid = features - dictionary.D @ codes.A
    dict_fit = (float(np.sum(resid * resid))
                + hp.lambda1 * float(np.sum(np.abs(codes.A)))) / (K * L)
    incoh = incoherence_value(dictionary)
    reg = params.weight_norm_sq()
    smooth = 0.0
    if K > 1:
        mass = codes.A.sum(axis=0).reshape(K, L)
        smooth = float(np.sum(np.abs(mass[:-1] - mass[1:]))) / K
    total = dict_fit + hp.lambda2 * incoh + hp.lambda3 * recon_mean + hp.lambda4 * reg
    return ObjectiveBreakdown(total, dict_fit, incoh, recon_mean, reg, smooth)


def evaluate_objective(model: DtdlModel, ds: WindowedDataset,
                       codes: SparseCodeMatrix | None = None) -> ObjectiveBreakdown:
    if codes is None:
        codes = model.codes
    if codes is None:
        raise ValueError("no sparse codes available for objective evaluation")
    return objective_breakdown(model.lstm, model.dictionary, ds, codes, model.hyper)


def train(ds: WindowedDataset, hp: HyperParams, device_names: list[str] | None = None,
          admm: AdmmOptions | None = None) -> DtdlModel:
    """Alternate the three block optimizers until the dictionary converges.

    Deterministic in (ds, hp): all randomness flows from hp.seed through named
    streams, and snippet visit order is fixed.
    """
    ds.validate()
    K, L = ds.window_count, ds.device_count
    if K < 2:
        raise ValueError("training needs at least 2 windows")
    if ds.omega != hp.omega:
        raise ValueError("dataset window length %d does not match hyper omega %d"
                         % (ds.omega, hp.omega))
    if device_names is None:
        device_names = ["device_%d" % (i + 1) for i in range(L)]
    if admm is None:
        admm = AdmmOptions()
    atoms = [hp.atoms_per_device] * L

    params = init_params(hp.m, spawn_rng(hp.seed, "lstm-init"))
    # optional reconstruction-only warm-up: a freshly initialized encoder maps
    # everything near zero, which would hand the alternation all-zero codes
    # and a collapsed fixed point; training the auto-encoder alone first gives
    # the dictionary informative features to start from
    for _ in range(hp.warmup_epochs):
        for k in range(K):
            for i in range(L):
                snippet = ds.scaler.normalize(ds.device_snippets[k, i])
                feature, _, _ = autoencode(params, snippet)
                params, _ = guarded_update(params, snippet, feature, hp.lambda4, 1.0, hp.eta)
    dictionary = init_dictionary(params, ds, atoms, spawn_rng(hp.seed, "dict-init"))
    G = build_G(K, L)
    features, _ = _encode_all(params, ds)
    codes, admm_result = solve_training_codes(
        features, dictionary, hp.lambda1, G, admm,
        mode=hp.smoothness_mode, penalty_weight=hp.penalty_weight)

    log: list[dict] = []
    converged = False
    for outer in range(1, hp.max_outer_iters + 1):
        # (a) LSTM update pass against fixed dictionary and codes
        params, eta_used, lstm_before, lstm_after = _lstm_block(params, ds, dictionary,
                                                                codes, hp)
        _check_finite("lstm", params.W, params.U, params.b, params.readout_v,
                      [params.readout_c])
        features, _ = _encode_all(params, ds)
        _check_finite("lstm", features)

        # (b) dictionary update against fixed encoder and codes
        old_D = dictionary.D.copy()
        if hp.lambda2 == 0.0:
            dict_before = fit_value(dictionary, features, codes.A)
            result = dual_ascent(features, codes.A, atoms, kkt_tol=1e-6)
            candidate = project_columns(result.dictionary)
            if fit_value(candidate, features, codes.A) <= dict_before + 1e-8:
                dictionary = candidate
            dict_after = fit_value(dictionary, features, codes.A)
            dict_step_used = float("nan")
        else:
            dict_before = fit_value(dictionary, features, codes.A) \
                + hp.lambda2 * incoherence_value(dictionary)
            step0 = hp.dict_step * lipschitz_step(dictionary, codes.A, hp.lambda2)
            dictionary, dict_step_used = guarded_incoherence_step(
                dictionary, features, codes.A, hp.lambda2, step0)
            dict_after = fit_value(dictionary, features, codes.A) \
                + hp.lambda2 * incoherence_value(dictionary)
        _check_finite("dictionary", dictionary.D)
        dictionary.validate_norms()
        dict_delta = float(np.mean(np.abs(dictionary.D - old_D)))

        # (c) sparse-code solve against fixed encoder and dictionary
        code_before = coding_objective(dictionary, features, codes, G, hp)
        new_codes, admm_result = solve_training_codes(
            features, dictionary, hp.lambda1, G, admm,
            mode=hp.smoothness_mode, penalty_weight=hp.penalty_weight, warm_start=codes)
        if coding_objective(dictionary, features, new_codes, G, hp) <= code_before + 1e-8:
            codes = new_codes
        code_after = coding_objective(dictionary, features, codes, G, hp)
        _check_finite("codes", codes.A)

        report = objective_breakdown(params, dictionary, ds, codes, hp)
        if not np.isfinite(report.total):
            raise NumericAbort("objective")
        log.append({
            "iter": outer,
            "J": report.total,
            "J1": report.dictionary_fit,
            "J2": report.incoherence,
            "J3": report.reconstruction,
            "J4": report.regularization,
            "smoothness_residual": report.smoothness_residual,
            "dict_delta": dict_delta,
            "lstm_eta": eta_used,
            "lstm_obj_before": lstm_before,
            "lstm_obj_after": lstm_after,
            "dict_step": dict_step_used,
            "dict_obj_before": dict_before,
            "dict_obj_after": dict_after,
            "code_obj_before": code_before,
            "code_obj_after": code_after,
            "admm_iters": admm_result.iterations,
            "admm_primal": admm_result.primal_residual,
            "admm_dual": admm_result.dual_residual,
            "admm_converged": admm_result.converged,
        })
        if dict_delta < hp.epsilon:
            converged = True
            break

    return DtdlModel(params, dictionary, ds.scaler, hp, log, list(device_names),
                     converged, codes)


def validate_grid(device_signals: np.ndarray, hp_base: HyperParams,
                  m_values=None, omega_values=None, lambda_values=None,
                  boundary_fraction: float = 0.5, on_watts: float = 5.0) -> list[dict]:
    """Train one model per configuration cell and report validation accuracy.

    Re-windows the raw signals for every omega, splits each windowed set at
    ``boundary_fraction``, trains on the training partition, and scores
    disaggregation accuracy on the validation partition. ``lambda_values``
    is a list of (lambda2, lambda3, lambda4) triples. Defaults sweep the
    validated menus for m and omega with the shipped lambda triple.
    """
    if m_values is None:
        m_values = [5, 7, 9, 11, 13]
    if omega_values is None:
        omega_values = [8, 10, 12, 14, 16]
    if lambda_values is None:
        lambda_values = [(hp_base.lambda2, hp_base.lambda3, hp_base.lambda4)]
    rows: list[dict] = []
    for omega in omega_values:
        full = make_windows(device_signals, omega)
        boundary = max(2, int(full.window_count * boundary_fraction))
        train_ds, val_ds, _ = split_dataset(full, boundary)
        for m in m_values:
            for lam2, lam3, lam4 in lambda_values:
                hp = replace(hp_base, m=int(m), omega=int(omega),
                             lambda2=float(lam2), lambda3=float(lam3), lambda4=float(lam4))
                model = train(train_ds, hp)
                metrics = disaggregator.evaluate_on_dataset(model, val_ds, on_watts=on_watts)
                rows.append({
                    "m": int(m), "omega": int(omega),
                    "lambda2": float(lam2), "lambda3": float(lam3), "lambda4": float(lam4),
                    "val_acc": metrics.acc, "converged": model.converged,
                })
    return rows
