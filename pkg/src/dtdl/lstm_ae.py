"""LSTM auto-encoder with hand-derived forward and backward passes.

The network is unrolled for 2*omega steps over a scalar sequence. The first
omega steps consume the snippet and leave the encoding in the hidden output
h_omega; the remaining omega steps run on zero input and emit one scalar per
step through a linear readout head, producing the reconstruction. Gate blocks
are stacked in (a, i, f, o) order in all parameter and activation arrays:
rows [0, m) input activation, [m, 2m) input gate, [2m, 3m) forget gate,
[3m, 4m) output gate.

One step of the recurrence, for scalar input x and previous (h, S):

    z = W x + U h + b                       # (4m,)
    a = tanh(z_a); i, f, o = sigm(z_i, z_f, z_o)
    S_new = f * S + i * a
    h_new = o * tanh(S_new)

The backward pass reverses the chain exactly, so gradients agree with finite
differences of `snippet_loss` to first order in the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmAeParams:
    """Stacked gate parameters plus the scalar readout head.

    W: (4m,) input weights (the input is a single scalar per step),
    U: (4m, m) recurrent weights, b: (4m,) biases, all in (a, i, f, o)
    block order. The readout maps a hidden vector to the scalar
    reconstruction sample: readout_v . h + readout_c.
    """

    m: int
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    readout_v: np.ndarray
    readout_c: float

    def __post_init__(self) -> None:
        m = self.m
        if self.W.shape != (4 * m,) or self.U.shape != (4 * m, m) or self.b.shape != (4 * m,):
            raise ValueError("gate parameter shapes inconsistent with m=%d" % m)
        if self.readout_v.shape != (m,):
            raise ValueError("readout_v must have shape (m,)")
        for arr in (self.W, self.U, self.b, self.readout_v):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite parameter entry")
        if not np.isfinite(self.readout_c):
            raise ValueError("non-finite readout_c")

    def copy(self) -> "LstmAeParams":
        return LstmAeParams(self.m, self.W.copy(), self.U.copy(), self.b.copy(),
                            self.readout_v.copy(), float(self.readout_c))

    def weight_norm_sq(self) -> float:
        """Sum of squared entries of every weight block and bias, readout included."""
        return float(
            np.dot(self.W, self.W) + np.sum(self.U * self.U) + np.dot(self.b, self.b)
            + np.dot(self.readout_v, self.readout_v) + self.readout_c ** 2
        )


@dataclass
class ParamGradients:
    dW: np.ndarray
    dU: np.ndarray
    db: np.ndarray
    d_readout_v: np.ndarray
    d_readout_c: float


@dataclass
class ForwardTape:
    """Per-step records of one unrolled pass.

    ``x`` has shape (steps,), ``gates`` (steps, 4m) holds the activated
    (a, i, f, o) values, and ``S``/``h`` have shape (steps + 1, m) with row 0
    holding the initial state. ``encode_steps`` is the number of leading
    steps that consumed input; decoding steps follow with zero input.
    """

    x: np.ndarray
    gates: np.ndarray
    S: np.ndarray
    h: np.ndarray
    encode_steps: int

    @property
    def steps(self) -> int:
        return self.x.shape[0]


def init_params(m: int, rng: np.random.Generator) -> LstmAeParams:
    """Uniform [-0.1, 0.1] weights; forget-gate biases start at +1 so the cell
    state can carry information across the window before training shapes it."""
    W = rng.uniform(-0.1, 0.1, size=4 * m)
    U = rng.uniform(-0.1, 0.1, size=(4 * m, m))
    b = np.zeros(4 * m)
    b[2 * m : 3 * m] = 1.0
    v = rng.uniform(-0.1, 0.1, size=m)
    return LstmAeParams(m, W, U, b, v, 0.0)


def lstm_step(params: LstmAeParams, x: float, h_prev: np.ndarray, S_prev: np.ndarray):
    """One recurrence step; returns (h, S, gates) with gates the activated 4m-vector."""
    m = params.m
    z = params.W * x + params.U @ h_prev + params.b
    gates = np.empty(4 * m)
    gates[:m] = np.tanh(z[:m])
    gates[m:] = sigmoid(z[m:])
    a, i, f, o = gates[:m], gates[m : 2 * m], gates[2 * m : 3 * m], gates[3 * m :]
    S = f * S_prev + i * a
    h = o * np.tanh(S)
    return h, S, gates


def _run(params: LstmAeParams, inputs: np.ndarray, h0: np.ndarray, S0: np.ndarray,
         encode_steps: int) -> ForwardTape:
    steps = inputs.shape[0]
    m = params.m
    tape = ForwardTape(
        x=np.asarray(inputs, dtype=np.float64).copy(),
        gates=np.zeros((steps, 4 * m)),
        S=np.zeros((steps + 1, m)),
        h=np.zeros((steps + 1, m)),
        encode_steps=encode_steps,
    )
    tape.h[0] = h0
    tape.S[0] = S0
    for l in range(1, steps + 1):
        h, S, gates = lstm_step(params, tape.x[l - 1], tape.h[l - 1], tape.S[l - 1])
        tape.h[l] = h
        tape.S[l] = S
        tape.gates[l - 1] = gates
    return tape


def readout(params: LstmAeParams, h: np.ndarray) -> float:
    return float(params.readout_v @ h + params.readout_c)


def encode(params: LstmAeParams, snippet: np.ndarray):
    """Run the encoder over a normalized snippet; returns (feature, tape prefix)."""
    snippet = np.asarray(snippet, dtype=np.float64)
    m = params.m
    tape = _run(params, snippet, np.zeros(m), np.zeros(m), encode_steps=snippet.shape[0])
    return tape.h[-1].copy(), tape


def decode(params: LstmAeParams, feature: np.ndarray, omega: int, cell: np.ndarray | None = None):
    """Run the decoder for ``omega`` zero-input steps from a feature vector.

    ``cell`` is the cell state carried over from the encoder when decoding an
    actual encoding; it defaults to zeros for dictionary-synthesized features.
    Returns (reconstruction, tape suffix).
    """
    feature = np.asarray(feature, dtype=np.float64)
    S0 = np.zeros(params.m) if cell is None else np.asarray(cell, dtype=np.float64)
    tape = _run(params, np.zeros(omega), feature, S0, encode_steps=0)
    recon = tape.h[1:] @ params.readout_v + params.readout_c
    return recon, tape


def autoencode(params: LstmAeParams, snippet: np.ndarray):
    """Full 2*omega pass; returns (feature, reconstruction, tape).

    The decoder continues from the encoder's final hidden and cell state as
    one uninterrupted chain.
    """
    snippet = np.asarray(snippet, dtype=np.float64)
    omega = snippet.shape[0]
    m = params.m
    inputs = np.concatenate([snippet, np.zeros(omega)])
    tape = _run(params, inputs, np.zeros(m), np.zeros(m), encode_steps=omega)
    feature = tape.h[omega].copy()
    recon = tape.h[omega + 1 :] @ params.readout_v + params.readout_c
    return feature, recon, tape


def snippet_loss(params: LstmAeParams, snippet: np.ndarray, encoder_target: np.ndarray,
                 lam4: float, recon_weight: float = 1.0) -> float:
    """Per-snippet training loss whose exact gradient `backward` computes.

    ||h_omega - encoder_target||^2 + recon_weight * ||recon - snippet||^2
    + (lam4 / 2) * (all squared parameter norms). The half on the penalty
    makes its gradient the bare lam4 * parameter used by the update rule.
    """
    feature, recon, _ = autoencode(params, snippet)
    enc = float(np.sum((feature - encoder_target) ** 2))
    rec = float(np.sum((recon - snippet) ** 2))
    return enc + recon_weight * rec + 0.5 * lam4 * params.weight_norm_sq()


def backward(params: LstmAeParams, tape: ForwardTape, encoder_target: np.ndarray,
             recon_target: np.ndarray, lam4: float,
             recon_weight: float = 1.0) -> ParamGradients:
    """Backpropagation through the full 2*omega chain.

    Injects 2*(h_omega - encoder_target) at the encode boundary and the
    readout-chained reconstruction residuals 2*recon_weight*(readout(h_l) -
    target) at every decode step, then runs the reverse recurrence and
    accumulates parameter sums plus the lam4 * parameter penalty terms.
    """
    m = params.m
    omega = tape.encode_steps
    if tape.steps != 2 * omega or omega == 0:
        raise ValueError("backward needs a full encode+decode tape (got %d steps, %d encoded)"
                         % (tape.steps, omega))
    recon_target = np.asarray(recon_target, dtype=np.float64)
    encoder_target = np.asarray(encoder_target, dtype=np.float64)
    if recon_target.shape != (omega,):
        raise ValueError("reconstruction target length %d does not match omega %d"
                         % (recon_target.shape[0], omega))
    if encoder_target.shape != (m,):
        raise ValueError("encoder target length %d does not match hidden size %d"
                         % (encoder_target.shape[0], m))

    dW = np.zeros(4 * m)
    dU = np.zeros((4 * m, m))
    db = np.zeros(4 * m)
    dv = np.zeros(m)
    dc = 0.0

    dh_carry = np.zeros(m)      # U^T delta-gates flowing back from step l+1
    dS_carry = np.zeros(m)      # deltaS_{l+1} * f_{l+1}
    for l in range(tape.steps, 0, -1):
        gates = tape.gates[l - 1]
        a = gates[:m]
        i = gates[m : 2 * m]
        f = gates[2 * m : 3 * m]
        o = gates[3 * m :]
        h_l = tape.h[l]
        S_l = tape.S[l]

        delta = np.zeros(m)
        if l == omega:
            delta += 2.0 * (h_l - encoder_target)
        if l > omega:
            err = 2.0 * recon_weight * (readout(params, h_l) - recon_target[l - omega - 1])
            dv += err * h_l
            dc += err
            delta += err * params.readout_v

        dh = delta + dh_carry
        tS = np.tanh(S_l)
        dS = dh * o * (1.0 - tS * tS) + dS_carry
        dgates = np.empty(4 * m)
        dgates[:m] = dS * i * (1.0 - a * a)
        dgates[m : 2 * m] = dS * a * i * (1.0 - i)
        dgates[2 * m : 3 * m] = dS * tape.S[l - 1] * f * (1.0 - f)
        dgates[3 * m :] = dh * tS * o * (1.0 - o)

        dW += dgates * tape.x[l - 1]
        dU += np.outer(dgates, tape.h[l - 1])
        db += dgates
        dh_carry = params.U.T @ dgates
        dS_carry = dS * f

    dW += lam4 * params.W
    dU += lam4 * params.U
    db += lam4 * params.b
    dv += lam4 * params.readout_v
    dc += lam4 * params.readout_c
    return ParamGradients(dW, dU, db, dv, float(dc))


def apply_update(params: LstmAeParams, grads: ParamGradients, eta: float) -> LstmAeParams:
    """Gradient-descent update with learning rate eta; returns new parameters."""
    return LstmAeParams(
        params.m,
        params.W - eta * grads.dW,
        params.U - eta * grads.dU,
        params.b - eta * grads.db,
        params.readout_v - eta * grads.d_readout_v,
        float(params.readout_c - eta * grads.d_readout_c),
    )


def guarded_update(params: LstmAeParams, snippet: np.ndarray, encoder_target: np.ndarray,
                   lam4: float, recon_weight: float, eta: float,
                   max_halvings: int = 20):
    """One descent step that never increases this snippet's loss.

    Halves eta up to ``max_halvings`` times; if no step helps, the parameters
    are returned unchanged (eta_used 0.0).
    """
    _, _, tape = autoencode(params, snippet)
    grads = backward(params, tape, encoder_target, snippet, lam4, recon_weight)
    before = snippet_loss(params, snippet, encoder_target, lam4, recon_weight)
    step = eta
    for _ in range(max_halvings + 1):
        candidate = apply_update(params, grads, step)
        after = snippet_loss(candidate, snippet, encoder_target, lam4, recon_weight)
        if after <= before:
            return candidate, step
        step *= 0.5
    return params, 0.0
