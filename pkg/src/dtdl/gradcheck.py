"""Finite-difference verification of every analytic gradient in the package.

Central differences on randomly seeded small instances, compared entrywise
against the hand-derived gradients: the LSTM backward pass, the dictionary
incoherence gradient, and the dual-ascent gradient of the norm-constraint
multipliers. Used by the `gradcheck` CLI command; the test suite carries its
own independent differencing code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary_learner import (
    Dictionary,
    closed_form_D,
    dictionary_objective,
    incoherence_gradient,
)
from .lstm_ae import LstmAeParams, autoencode, backward, snippet_loss
from .seeding import spawn_rng

# Denominator floor: central differences with step ~1e-5 cannot resolve
# gradient entries much below this scale relative to an O(1) loss.
REL_FLOOR = 1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float
    passed: bool


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _pack(params: LstmAeParams) -> np.ndarray:
    return np.concatenate([params.W, params.U.ravel(), params.b,
                           params.readout_v, [params.readout_c]])


def _unpack(vec: np.ndarray, m: int) -> LstmAeParams:
    sizes = [4 * m, 4 * m * m, 4 * m, m, 1]
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    return LstmAeParams(m, parts[0].copy(), parts[1].reshape(4 * m, m).copy(),
                        parts[2].copy(), parts[3].copy(), float(parts[4][0]))


def check_lstm_gradients(seed: int, tolerance: float = 1e-4, fd_step: float = 1e-5,
                         recon_weight: float | None = None) -> CheckResult:
    """Backward pass vs. central differences of the per-snippet loss."""
    rng = spawn_rng(seed, "gradcheck", "lstm")
    m = int(rng.integers(1, 5))
    omega = int(rng.integers(2, 7))
    params = LstmAeParams(
        m,
        rng.uniform(-0.5, 0.5, 4 * m),
        rng.uniform(-0.5, 0.5, (4 * m, m)),
        rng.uniform(-0.5, 0.5, 4 * m),
        rng.uniform(-0.5, 0.5, m),
        float(rng.uniform(-0.5, 0.5)),
    )
    snippet = rng.uniform(0.0, 1.0, omega)
    target = rng.uniform(-1.0, 1.0, m)
    lam4 = float(rng.uniform(0.0, 1.0))
    weight = float(rng.uniform(0.5, 2.0)) if recon_weight is None else recon_weight

    _, _, tape = autoencode(params, snippet)
    grads = backward(params, tape, target, snippet, lam4, weight)
    analytic = np.concatenate([grads.dW, grads.dU.ravel(), grads.db,
                               grads.d_readout_v, [grads.d_readout_c]])

    theta = _pack(params)
    numeric = np.zeros_like(theta)
    for j in range(theta.size):
        bump = np.zeros_like(theta)
        bump[j] = fd_step
        up = snippet_loss(_unpack(theta + bump, m), snippet, target, lam4, weight)
        dn = snippet_loss(_unpack(theta - bump, m), snippet, target, lam4, weight)
        numeric[j] = (up - dn) / (2.0 * fd_step)
    err = rel_err(analytic, numeric)
    return CheckResult("lstm_backward", seed, err, err <= tolerance)


def _random_dictionary_instance(rng: np.random.Generator):
    d = int(rng.integers(2, 7))
    L = int(rng.integers(2, 4))
    atoms = [int(rng.integers(1, 4)) for _ in range(L)]
    K = int(rng.integers(2, 5))
    n = sum(atoms)
    D = rng.uniform(-1.0, 1.0, (d, n))
    D /= np.maximum(np.linalg.norm(D, axis=0), 1.0)
    dictionary = Dictionary(d, atoms, D)
    features = rng.uniform(-1.0, 1.0, (d, K * L))
    codes = np.zeros((n, K * L))
    for i in range(L):
        rows = dictionary.block_slice(i)
        cols = np.arange(i, K * L, L)
        codes[rows, cols] = rng.uniform(-1.0, 1.0, (atoms[i], K))
    return dictionary, features, codes


def check_incoherence_gradient(seed: int, tolerance: float = 1e-4,
                               fd_step: float = 1e-5) -> CheckResult:
    """Incoherence-regime dictionary gradient vs. differences of its objective."""
    rng = spawn_rng(seed, "gradcheck", "incoherence")
    dictionary, features, codes = _random_dictionary_instance(rng)
    lam2 = float(rng.uniform(0.1, 1.0))
    analytic = incoherence_gradient(dictionary, features, codes, lam2)
    numeric = np.zeros_like(analytic)
    base = dictionary.D
    for r in range(base.shape[0]):
        for c in range(base.shape[1]):
            up = base.copy()
            up[r, c] += fd_step
            dn = base.copy()
            dn[r, c] -= fd_step
            d_up = Dictionary(dictionary.d, list(dictionary.per_device_atoms), up)
            d_dn = Dictionary(dictionary.d, list(dictionary.per_device_atoms), dn)
            numeric[r, c] = (dictionary_objective(d_up, features, codes, lam2)
                             - dictionary_objective(d_dn, features, codes, lam2)) / (2 * fd_step)
    err = rel_err(analytic, numeric)
    return CheckResult("incoherence_gradient", seed, err, err <= tolerance)


def _dual_value(features: np.ndarray, codes: np.ndarray, phi: np.ndarray,
                atoms: list[int]) -> float:
    dictionary = closed_form_D(features, codes, phi, atoms)
    resid = features - dictionary.D @ codes
    norms_sq = np.sum(dictionary.D * dictionary.D, axis=0)
    return float(np.sum(resid * resid)) / codes.shape[1] + float(phi @ (norms_sq - 1.0))


def check_dual_gradient(seed: int, tolerance: float = 1e-4,
                        fd_step: float = 1e-6) -> CheckResult:
    """Dual-ascent gradient (column norm minus one) vs. differences of the dual."""
    rng = spawn_rng(seed, "gradcheck", "dual")
    dictionary, features, codes = _random_dictionary_instance(rng)
    atoms = list(dictionary.per_device_atoms)
    phi = rng.uniform(0.05, 0.5, codes.shape[0])
    fitted = closed_form_D(features, codes, phi, atoms)
    analytic = np.sum(fitted.D * fitted.D, axis=0) - 1.0
    numeric = np.zeros_like(phi)
    for j in range(phi.size):
        up = phi.copy()
        up[j] += fd_step
        dn = phi.copy()
        dn[j] -= fd_step
        numeric[j] = (_dual_value(features, codes, up, atoms)
                      - _dual_value(features, codes, dn, atoms)) / (2 * fd_step)
    err = rel_err(analytic, numeric)
    return CheckResult("dual_gradient", seed, err, err <= tolerance)


def run_all(seed: int, trials: int = 10, tolerance: float = 1e-4) -> list[CheckResult]:
    results = []
    for t in range(trials):
        results.append(check_lstm_gradients(seed + t, tolerance))
        results.append(check_incoherence_gradient(seed + t, tolerance))
        results.append(check_dual_gradient(seed + t, tolerance))
    return results
