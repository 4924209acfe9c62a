"""Constrained sparse coding via Proximal Jacobian ADMM, plus test-time lasso.

Training codes solve, per device block i and window k,

    min sum_{i,k} ||f_{i,k} - D_i a^i(k)||^2 + lam1 ||a^i(k)||_1
    s.t. a^i(k) = a^i(k+1)  for k = 1..K-1   (hard mode, the default)

where the equality constraints are the columns of the smoothness matrix G.
All columns take a parallel proximal step each sweep against the previous
sweep's values (Jacobian scheme), followed by a dual-ascent update of the
coupling multipliers. Penalty mode replaces the constraint with a quadratic
penalty; "none" drops coupling entirely and the solver reduces to parallel
proximal-gradient lasso, which is what `lasso_code` uses at test time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SparseCodingError(ValueError):
    """Inconsistent shapes or options handed to the sparse coder."""


@dataclass
class AdmmOptions:
    rho: float = 1.0
    prox_weight: float = 1.0
    max_iters: int = 500
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6

    def __post_init__(self) -> None:
        if min(self.rho, self.prox_weight, self.primal_tol, self.dual_tol) <= 0:
            raise SparseCodingError("ADMM options must be positive")
        if self.max_iters < 1:
            raise SparseCodingError("max_iters must be at least 1")


@dataclass
class SmoothnessMatrix:
    """The KL-by-KL coupling matrix whose columns encode consecutive-window
    differences: multiplying codes A (N x KL) by it yields columns
    a^i(k) - a^i(k+1) for k = 1..K-1, with the last L columns zero."""

    K: int
    L: int

    @property
    def size(self) -> int:
        return self.K * self.L

    def triples(self):
        """(rows, cols, values) of all nonzero entries."""
        n_active = (self.K - 1) * self.L
        cols = np.arange(n_active, dtype=np.int64)
        rows = np.concatenate([cols, cols + self.L])
        vals = np.concatenate([np.ones(n_active), -np.ones(n_active)])
        return np.concatenate([cols, cols]), rows, vals

    def to_dense(self) -> np.ndarray:
        g = np.zeros((self.size, self.size))
        cols, rows, vals = self.triples()
        g[rows, cols] = vals
        return g

    def apply(self, codes: np.ndarray) -> np.ndarray:
        """Compute codes @ G without materializing G."""
        if codes.shape[1] != self.size:
            raise SparseCodingError("code matrix has %d columns, expected %d"
                                    % (codes.shape[1], self.size))
        out = np.zeros_like(codes)
        n_active = (self.K - 1) * self.L
        out[:, :n_active] = codes[:, :n_active] - codes[:, self.L :]
        return out


def build_G(K: int, L: int) -> SmoothnessMatrix:
    if K < 1 or L < 1:
        raise SparseCodingError("K and L must be positive")
    return SmoothnessMatrix(K, L)


@dataclass
class SparseCodeMatrix:
    """Codes A with one column per (window, device) pair.

    Column j = k*L + i (0-based) holds device i's code for window k and is
    zero outside device i's atom block.
    """

    per_device_atoms: list[int]
    K: int
    L: int
    A: np.ndarray  # (N, K*L)

    @property
    def N(self) -> int:
        return int(sum(self.per_device_atoms))

    def block_slice(self, device: int) -> slice:
        start = int(sum(self.per_device_atoms[:device]))
        return slice(start, start + self.per_device_atoms[device])

    def device_columns(self, device: int) -> np.ndarray:
        return np.arange(device, self.K * self.L, self.L)

    def column(self, window: int, device: int) -> np.ndarray:
        return self.A[:, window * self.L + device]

    def device_codes(self, device: int) -> np.ndarray:
        """Device i's code block across windows, shape (N_i, K)."""
        return self.A[self.block_slice(device), self.device_columns(device)]

    def support_mask(self) -> np.ndarray:
        """Boolean mask of entries allowed to be nonzero."""
        mask = np.zeros_like(self.A, dtype=bool)
        for i in range(self.L):
            mask[self.block_slice(i), self.device_columns(i)] = True
        return mask

    def validate_support(self, atol: float = 0.0) -> None:
        if np.any(np.abs(self.A[~self.support_mask()]) > atol):
            raise SparseCodingError("code entries outside their device block")
        if not np.all(np.isfinite(self.A)):
            raise SparseCodingError("non-finite code entry")


def soft_threshold(v, t):
    """sign(v) * max(|v| - t, 0), elementwise."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(np.asarray(t) < 0):
        raise SparseCodingError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@dataclass
class CodingGroup:
    """A run of columns sharing one design matrix.

    ``B`` is (d, n) and ``F`` is (d, n_cols); in chain modes consecutive
    columns are constrained (hard) or penalized (penalty) to be equal.
    """

    B: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        self.B = np.asarray(self.B, dtype=np.float64)
        self.F = np.asarray(self.F, dtype=np.float64)
        if self.B.ndim != 2 or self.F.ndim != 2 or self.B.shape[0] != self.F.shape[0]:
            raise SparseCodingError("group design and targets have mismatched shapes")


@dataclass
class PjadmmResult:
    codes: list[np.ndarray]          # per group, (n, n_cols)
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    # rows (iter, lagrangian, primal, dual, sweep_delta); sweep_delta is the
    # augmented-Lagrangian change across the primal sweep at fixed
    # multipliers, which the step bound keeps nonpositive
    history: list[tuple] = field(default_factory=list)


def _group_step_bound(group: CodingGroup, coupling: float, coupled: bool) -> float:
    """Majorizing curvature for one column's smooth part under a parallel sweep."""
    btb = group.B.T @ group.B
    lam_max = float(np.linalg.eigvalsh(btb)[-1]) if btb.size else 0.0
    bound = 2.0 * lam_max
    if coupled and group.F.shape[1] > 1:
        bound += 4.0 * coupling  # chain coupling curvature, Jacobi-safe margin
    return bound


def _kkt_violation(group: CodingGroup, Z: np.ndarray, lam1: float) -> float:
    """Max violation of the l1 subgradient optimality conditions for a lasso group."""
    grad = 2.0 * group.B.T @ (group.B @ Z - group.F)
    zero = Z == 0.0
    viol_zero = np.maximum(np.abs(grad) - lam1, 0.0)
    viol_nonzero = np.abs(grad + lam1 * np.sign(Z))
    viol = np.where(zero, viol_zero, viol_nonzero)
    return float(viol.max()) if viol.size else 0.0


def pjadmm_solve(groups: list[CodingGroup], lam1: float, opts: AdmmOptions | None = None,
                 mode: str = "hard", penalty_weight: float = 0.0,
                 warm_start: list[np.ndarray] | None = None) -> PjadmmResult:
    """Solve the coupled sparse-coding problem over all groups.

    mode "hard": consecutive columns within a group are tied by an equality
    constraint handled with scaled dual variables. mode "penalty": the same
    differences are quadratically penalized with ``penalty_weight``. mode
    "none": columns are independent lasso problems. Non-convergence returns a
    flagged result, never an exception.
    """
    if opts is None:
        opts = AdmmOptions()
    if mode not in ("hard", "penalty", "none"):
        raise SparseCodingError("unknown mode %r" % mode)
    if lam1 < 0:
        raise SparseCodingError("lam1 must be nonnegative")
    rho = opts.rho
    coupling = rho if mode == "hard" else (penalty_weight if mode == "penalty" else 0.0)

    Z = []
    for g_idx, g in enumerate(groups):
        n = g.B.shape[1]
        if warm_start is not None:
            z0 = np.asarray(warm_start[g_idx], dtype=np.float64).copy()
            if z0.shape != (n, g.F.shape[1]):
                raise SparseCodingError("warm start shape mismatch for group %d" % g_idx)
        else:
            z0 = np.zeros((n, g.F.shape[1]))
        Z.append(z0)
    duals = [np.zeros((g.B.shape[1], max(g.F.shape[1] - 1, 0))) for g in groups]
    btb = [g.B.T @ g.B for g in groups]
    btf = [g.B.T @ g.F for g in groups]
    steps = [_group_step_bound(g, coupling, mode != "none") + opts.prox_weight for g in groups]

    def lagrangian(z_list, dual_list) -> float:
        val = 0.0
        for g, z, u in zip(groups, z_list, dual_list):
            resid = g.B @ z - g.F
            val += float(np.sum(resid * resid)) + lam1 * float(np.sum(np.abs(z)))
            if z.shape[1] > 1:
                r = z[:, :-1] - z[:, 1:]
                if mode == "hard":
                    val += 0.5 * rho * float(np.sum((r + u) ** 2) - np.sum(u * u))
                elif mode == "penalty":
                    val += 0.5 * penalty_weight * float(np.sum(r * r))
        return val

    history: list[tuple] = []
    primal = dual = np.inf
    converged = False
    iters_done = 0
    al_pre = lagrangian(Z, duals)
    for it in range(1, opts.max_iters + 1):
        iters_done = it
        max_step = 0.0
        new_Z = []
        for idx, g in enumerate(groups):
            z = Z[idx]
            grad = 2.0 * (btb[idx] @ z - btf[idx])
            if z.shape[1] > 1 and mode != "none":
                r = z[:, :-1] - z[:, 1:]
                if mode == "hard":
                    pull = rho * (r + duals[idx])
                else:
                    pull = penalty_weight * r
                grad[:, :-1] += pull
                grad[:, 1:] -= pull
            step = steps[idx]
            z_new = soft_threshold(z - grad / step, lam1 / step)
            max_step = max(max_step, step * float(np.max(np.abs(z_new - z))) if z.size else 0.0)
            new_Z.append(z_new)
        Z = new_Z
        sweep_delta = lagrangian(Z, duals) - al_pre
        if mode == "hard":
            sq = 0.0
            for idx in range(len(groups)):
                if Z[idx].shape[1] > 1:
                    r = Z[idx][:, :-1] - Z[idx][:, 1:]
                    duals[idx] = duals[idx] + r
                    sq += float(np.sum(r * r))
            primal = float(np.sqrt(sq))
            al_pre = lagrangian(Z, duals)  # multipliers moved; re-anchor
        else:
            primal = 0.0
            al_pre = sweep_delta + al_pre
        dual = max_step
        history.append((it, al_pre, primal, dual, sweep_delta))

        if mode == "none":
            if max(_kkt_violation(g, z, lam1) for g, z in zip(groups, Z)) <= opts.dual_tol:
                converged = True
                break
        elif mode == "hard":
            if primal <= opts.primal_tol and dual <= opts.dual_tol:
                converged = True
                break
        else:
            if dual <= opts.dual_tol:
                converged = True
                break

    return PjadmmResult(Z, converged, iters_done, primal, dual, history)


def _feature_columns(features: np.ndarray, K: int, L: int, device: int) -> np.ndarray:
    return features[:, np.arange(device, K * L, L)]


def solve_training_codes(features: np.ndarray, dictionary, lam1: float,
                         G: SmoothnessMatrix, opts: AdmmOptions | None = None,
                         mode: str = "hard", penalty_weight: float = 0.0,
                         warm_start: SparseCodeMatrix | None = None):
    """Sparse-code every (window, device) feature against its device block.

    ``features`` is (d, K*L) with column k*L + i holding the encoding of
    device i's window k; ``dictionary`` supplies the per-device blocks.
    Returns (SparseCodeMatrix, PjadmmResult).
    """
    K, L = G.K, G.L
    if features.shape[1] != K * L:
        raise SparseCodingError("feature matrix has %d columns, expected %d"
                                % (features.shape[1], K * L))
    if features.shape[0] != dictionary.d:
        raise SparseCodingError("feature dimension %d does not match dictionary %d"
                                % (features.shape[0], dictionary.d))
    if L != dictionary.device_count:
        raise SparseCodingError("smoothness matrix device count mismatch")
    groups = [CodingGroup(dictionary.block(i), _feature_columns(features, K, L, i))
              for i in range(L)]
    ws = None
    if warm_start is not None:
        ws = [warm_start.device_codes(i) for i in range(L)]
    result = pjadmm_solve(groups, lam1, opts, mode=mode, penalty_weight=penalty_weight,
                          warm_start=ws)
    codes = SparseCodeMatrix(list(dictionary.per_device_atoms), K, L,
                             np.zeros((dictionary.N, K * L)))
    for i in range(L):
        codes.A[codes.block_slice(i), codes.device_columns(i)] = result.codes[i]
    return codes, result


def lasso_code(feature: np.ndarray, dictionary, lam1: float,
               opts: AdmmOptions | None = None) -> np.ndarray:
    """Code one feature against the full dictionary (all device blocks active).

    Same proximal machinery as training, with no coupling. The default
    iteration budget is raised above the ADMM default because the subgradient
    optimality conditions are driven to ``dual_tol``.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (dictionary.d,):
        raise SparseCodingError("feature has shape %s, expected (%d,)"
                                % (feature.shape, dictionary.d))
    if opts is None:
        opts = AdmmOptions(max_iters=20000)
    result = pjadmm_solve([CodingGroup(dictionary.D, feature[:, None])], lam1, opts, mode="none")
    return result.codes[0][:, 0]
