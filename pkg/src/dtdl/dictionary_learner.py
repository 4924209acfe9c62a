"""Dictionary updates against encoded snippets: closed form with dual ascent
for the unit-norm constraint, and projected gradient descent when the
cross-device incoherence penalty is active.

The dictionary lives in the encoder's feature space. Column norms are kept
at or below one; the constrained least-squares update follows the classic
dual formulation: D = F A^T (A A^T + Sigma)^{-1} with Sigma = (L*K) diag(phi)
and nonnegative multipliers phi driven by gradient ascent on the dual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lstm_ae import LstmAeParams, encode
from .signal_data import WindowedDataset


class DictionaryError(ValueError):
    """Shape mismatch or singular update system."""


@dataclass
class Dictionary:
    """d x N atom matrix partitioned into per-device blocks."""

    d: int
    per_device_atoms: list[int]
    D: np.ndarray

    def __post_init__(self) -> None:
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.D.shape != (self.d, self.N):
            raise DictionaryError("dictionary is %s, expected (%d, %d)"
                                  % (self.D.shape, self.d, self.N))

    @property
    def N(self) -> int:
        return int(sum(self.per_device_atoms))

    @property
    def device_count(self) -> int:
        return len(self.per_device_atoms)

    def block_slice(self, device: int) -> slice:
        start = int(sum(self.per_device_atoms[:device]))
        return slice(start, start + self.per_device_atoms[device])

    def block(self, device: int) -> np.ndarray:
        return self.D[:, self.block_slice(device)]

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.D, axis=0)

    def validate_norms(self, tol: float = 1e-9) -> None:
        worst = float(self.column_norms().max(initial=0.0))
        if worst > 1.0 + tol:
            raise DictionaryError("atom norm %.12g exceeds the unit bound" % worst)


@dataclass
class DualAscentResult:
    phi: np.ndarray
    dictionary: Dictionary
    converged: bool
    iterations: int
    feasibility: float       # max(column norm - 1, 0)
    complementarity: float   # max |phi_j * (norm_j^2 - 1)|


def collect_features(params: LstmAeParams, ds: WindowedDataset) -> np.ndarray:
    """Encode every normalized snippet; column k*L + i is device i, window k."""
    K, L = ds.window_count, ds.device_count
    out = np.zeros((params.m, K * L))
    for k in range(K):
        for i in range(L):
            snippet = ds.scaler.normalize(ds.device_snippets[k, i])
            out[:, k * L + i], _ = encode(params, snippet)
    return out


def closed_form_D(features: np.ndarray, codes: np.ndarray, phi: np.ndarray,
                  per_device_atoms: list[int], ridge: float = 1e-10) -> Dictionary:
    """Exact minimizer of the multiplier-augmented least squares.

    Solves D (codes codes^T + (L*K) diag(phi) + ridge I) = features codes^T.
    The tiny ridge keeps early, rank-deficient code matrices solvable; the
    paper's formula assumes invertibility silently.
    """
    d, n_cols = features.shape
    n_atoms = codes.shape[0]
    phi = np.asarray(phi, dtype=np.float64)
    if codes.shape[1] != n_cols or phi.shape != (n_atoms,):
        raise DictionaryError("feature/code/multiplier shapes disagree")
    system = codes @ codes.T + np.diag(n_cols * phi)
    system[np.diag_indices_from(system)] += ridge
    try:
        sol = np.linalg.solve(system, codes @ features.T)
    except np.linalg.LinAlgError as exc:
        raise DictionaryError("dictionary update system singular after ridge: %s" % exc) from None
    return Dictionary(d, list(per_device_atoms), sol.T)


def dual_ascent(features: np.ndarray, codes: np.ndarray, per_device_atoms: list[int],
                step: float = 0.01, max_iters: int = 1000,
                kkt_tol: float = 1e-4) -> DualAscentResult:
    """Projected gradient ascent on the dual multipliers of the norm constraints.

    The dual gradient for multiplier j is ||D(phi)_{:,j}||^2 - 1. Terminates
    once primal feasibility and complementary slackness both fall below
    ``kkt_tol``; otherwise returns the last iterate flagged.
    """
    n_atoms = codes.shape[0]
    phi = np.zeros(n_atoms)
    dictionary = closed_form_D(features, codes, phi, per_device_atoms)
    feas = comp = np.inf
    converged = False
    iters_done = 0
    for it in range(1, max_iters + 1):
        iters_done = it
        norms_sq = np.sum(dictionary.D * dictionary.D, axis=0)
        grad = norms_sq - 1.0
        feas = float(np.maximum(np.sqrt(norms_sq) - 1.0, 0.0).max(initial=0.0))
        comp = float(np.abs(phi * grad).max(initial=0.0))
        if feas <= kkt_tol and comp <= kkt_tol:
            converged = True
            break
        phi = np.maximum(phi + step * grad, 0.0)
        dictionary = closed_form_D(features, codes, phi, per_device_atoms)
    return DualAscentResult(phi, dictionary, converged, iters_done, feas, comp)


def project_columns(dictionary: Dictionary) -> Dictionary:
    """Rescale any column with norm above one back to the unit sphere."""
    norms = dictionary.column_norms()
    scale = np.where(norms > 1.0, norms, 1.0)
    return Dictionary(dictionary.d, list(dictionary.per_device_atoms), dictionary.D / scale)


def incoherence_value(dictionary: Dictionary) -> float:
    """Sum over ordered device pairs (i, j), i != j, of ||D_i^T D_j||_F^2."""
    total = 0.0
    L = dictionary.device_count
    for i in range(L):
        for j in range(L):
            if i == j:
                continue
            cross = dictionary.block(i).T @ dictionary.block(j)
            total += float(np.sum(cross * cross))
    return total


def fit_value(dictionary: Dictionary, features: np.ndarray, codes: np.ndarray) -> float:
    """Mean squared feature-fit error (1/(L*K)) sum_j ||f_j - D a_j||^2."""
    resid = features - dictionary.D @ codes
    return float(np.sum(resid * resid)) / codes.shape[1]


def dictionary_objective(dictionary: Dictionary, features: np.ndarray, codes: np.ndarray,
                         lam2: float) -> float:
    """The dictionary block's objective: feature fit plus weighted incoherence."""
    return fit_value(dictionary, features, codes) + lam2 * incoherence_value(dictionary)


def incoherence_gradient(dictionary: Dictionary, features: np.ndarray, codes: np.ndarray,
                         lam2: float) -> np.ndarray:
    """Exact gradient of `dictionary_objective` with respect to every block.

    Per device i: (2/(L*K)) (D_i A_i - F_i) A_i^T + 4 lam2 (sum_{j != i}
    D_j D_j^T) D_i, every block read from the current iterate (Jacobi).
    """
    n_cols = codes.shape[1]
    full = dictionary.D
    gram_total = full @ full.T
    grad = np.zeros_like(full)
    L = dictionary.device_count
    K = n_cols // L
    for i in range(L):
        rows = dictionary.block_slice(i)
        cols = np.arange(i, K * L, L)
        block = dictionary.block(i)
        A_i = codes[rows, cols]            # (N_i, K)
        F_i = features[:, cols]
        grad_fit = (2.0 / n_cols) * (block @ A_i - F_i) @ A_i.T
        others = gram_total - block @ block.T
        grad[:, rows] = grad_fit + 4.0 * lam2 * others @ block
    return grad


def incoherence_grad_step(dictionary: Dictionary, features: np.ndarray, codes: np.ndarray,
                          lam2: float, step: float) -> Dictionary:
    """One full-sweep gradient step on all blocks, then column projection."""
    grad = incoherence_gradient(dictionary, features, codes, lam2)
    moved = Dictionary(dictionary.d, list(dictionary.per_device_atoms),
                       dictionary.D - step * grad)
    return project_columns(moved)


def lipschitz_step(dictionary: Dictionary, codes: np.ndarray, lam2: float) -> float:
    """Inverse curvature bound for the dictionary objective's smooth part.

    The fit term's Hessian for block i is (2/(L*K)) A_i A_i^T and the
    incoherence term contributes at most 4*lam2 * sum_{j != i} ||D_j||_2^2
    (unit-ball columns). A unit step over this bound is a safe projected
    gradient step however small the codes still are.
    """
    n_cols = codes.shape[1]
    L = dictionary.device_count
    K = n_cols // L
    frob_sq = float(np.sum(dictionary.D * dictionary.D))
    worst = 0.0
    for i in range(L):
        A_i = codes[dictionary.block_slice(i), np.arange(i, K * L, L)]
        gram = A_i @ A_i.T
        fit_curv = (2.0 / n_cols) * (float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0)
        block = dictionary.block(i)
        own = float(np.sum(block * block))
        coupling = 4.0 * lam2 * max(frob_sq - own, 0.0)
        worst = max(worst, fit_curv + coupling)
    return 1.0 / max(worst, 1e-12)


def guarded_incoherence_step(dictionary: Dictionary, features: np.ndarray, codes: np.ndarray,
                             lam2: float, step: float, max_halvings: int = 20):
    """Halve the step until the dictionary objective does not increase.

    Returns (dictionary, step_used); step_used is 0.0 when no step helped and
    the input dictionary is returned unchanged.
    """
    before = dictionary_objective(dictionary, features, codes, lam2)
    trial = step
    for _ in range(max_halvings + 1):
        candidate = incoherence_grad_step(dictionary, features, codes, lam2, trial)
        if dictionary_objective(candidate, features, codes, lam2) <= before:
            return candidate, trial
        trial *= 0.5
    return dictionary, 0.0


def init_dictionary(params: LstmAeParams, ds: WindowedDataset, per_device_atoms: list[int],
                    rng: np.random.Generator) -> Dictionary:
    """Seed each device block with encodings of sampled training snippets.

    Data-driven initialization gives the alternation meaningful targets from
    the first iteration. Sampling is restricted to the device's energetic
    windows (above a quarter of its peak window energy) when any exist, since
    encodings of idle windows are near-zero and make useless atoms. Columns
    are projected onto the unit ball.
    """
    K, L = ds.window_count, ds.device_count
    if len(per_device_atoms) != L:
        raise DictionaryError("need one atom count per device")
    cols = []
    for i in range(L):
        energy = ds.device_snippets[:, i, :].sum(axis=1)
        active = np.nonzero(energy > 0.25 * energy.max())[0]
        pool = active if active.size else np.arange(K)
        picks = pool[rng.integers(0, pool.size, size=per_device_atoms[i])]
        for k in picks:
            snippet = ds.scaler.normalize(ds.device_snippets[int(k), i])
            feature, _ = encode(params, snippet)
            cols.append(feature)
    dictionary = Dictionary(params.m, list(per_device_atoms), np.array(cols).T)
    return project_columns(dictionary)
