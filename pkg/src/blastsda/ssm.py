"""State-space kernel math: ZOH discretization, recurrent and convolutional
forms of the linear time-invariant scan, and the input-dependent (selective)
scan with a hand-derived adjoint for reverse-mode differentiation.

All state matrices are diagonal, stored as length-N vectors. The LTI helpers
are plain numpy; `selective_scan_op` participates in the autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, accumulate_grad, tape_record, _check_finite

__all__ = [
    "TAYLOR_THRESHOLD",
    "ContinuousSSM",
    "DiscreteSSM",
    "SelectiveParams",
    "SelectiveWeights",
    "discretize_zoh",
    "scan_recurrent",
    "conv_kernel",
    "apply_causal_conv",
    "selective_scan",
    "selective_projections",
    "selective_scan_op",
    "stable_a_init",
]

# Below this magnitude of delta*A the closed-form input discretization
# (exp(z) - 1)/z cancels catastrophically; switch to its Taylor series.
TAYLOR_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ContinuousSSM:
    """Continuous diagonal system: state decay a (<0), input b, readout c, step delta."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.a.shape[0]
        if n < 1 or self.b.shape != (n,) or self.c.shape != (n,):
            raise ValueError("a, b, c must be equal-length vectors with N >= 1")
        if not np.all(self.a < 0):
            raise ValueError("all state-decay entries must be strictly negative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class DiscreteSSM:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class SelectiveParams:
    """Per-timestep input/readout projections and step sizes (L, N) / (L,)."""

    b_seq: np.ndarray
    c_seq: np.ndarray
    delta_seq: np.ndarray

    def __post_init__(self):
        for name in ("b_seq", "c_seq", "delta_seq"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.b_seq.shape != self.c_seq.shape or self.b_seq.ndim != 2:
            raise ValueError("b_seq and c_seq must both be (L, N)")
        if self.delta_seq.shape != (self.b_seq.shape[0],):
            raise ValueError("delta_seq must be (L,)")
        if not np.all(self.delta_seq > 0):
            raise ValueError("all step sizes must be positive")


def _phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with a series branch near zero."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = np.expm1(safe) / safe
    series = 1.0 + z / 2.0 + (z * z) / 6.0
    return np.where(small, series, exact)


def _phi_prime(z: np.ndarray) -> np.ndarray:
    """Derivative of _phi: (exp(z)(z - 1) + 1) / z^2, series branch near zero."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
    series = 0.5 + z / 3.0 + (z * z) / 8.0
    return np.where(small, series, exact)


def discretize_zoh(ssm: ContinuousSSM) -> DiscreteSSM:
    """Zero-order-hold discretization, per diagonal entry.

    a_bar = exp(delta a); b_bar = (delta a)^(-1) (exp(delta a) - 1) delta b,
    evaluated as b * delta * phi(delta a) so the small-|delta a| limit is
    handled by the series branch of phi.
    """
    if ssm.delta <= 0:
        raise ValueError("delta must be positive")
    z = ssm.delta * ssm.a
    a_bar = np.exp(z)
    b_bar = ssm.b * ssm.delta * _phi(z)
    return DiscreteSSM(a_bar=a_bar, b_bar=b_bar, c=ssm.c.copy())


def scan_recurrent(d: DiscreteSSM, x, h0: np.ndarray | None = None) -> np.ndarray:
    """Exact sequential recurrence h_t = a_bar h_{t-1} + b_bar x_t, y_t = <c, h_t>."""
    x = np.asarray(x, dtype=np.float64)
    n = d.a_bar.shape[0]
    h = np.zeros(n) if h0 is None else np.array(h0, dtype=np.float64)
    y = np.empty(x.shape[0])
    for t in range(x.shape[0]):
        h = d.a_bar * h + d.b_bar * x[t]
        y[t] = d.c @ h
    return y


def conv_kernel(d: DiscreteSSM, length: int) -> np.ndarray:
    """Impulse-response kernel K[t] = sum_i c_i a_bar_i^t b_bar_i."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    powers = d.a_bar[None, :] ** np.arange(length)[:, None]
    return powers @ (d.c * d.b_bar)


def apply_causal_conv(kernel: np.ndarray, x) -> np.ndarray:
    """Causal zero-padded convolution: y_t = sum_{tau<=t} K[tau] x_{t-tau}."""
    kernel = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kernel.shape != x.shape or kernel.ndim != 1:
        raise ValueError("kernel and input must be 1-D sequences of equal length")
    return np.convolve(x, kernel)[: x.shape[0]]


# ---------------------------------------------------------------------------
# selective (input-dependent) scan

def _selective_forward(a, b_seq, c_seq, delta_seq, x):
    """Grouped scan core. Shapes: a (G,N), b/c (G,L,N), delta (G,L), x (G,L,D).

    Per group g and channel d, the state h (N,) evolves with shared per-step
    ZOH-discretized coefficients; y collects <c_t, h_t> per channel.
    Returns y (G,L,D) and the saved context for the adjoint pass.
    """
    g_n, length, d_ch = x.shape[0], x.shape[1], x.shape[2]
    n = a.shape[1]
    z = delta_seq[..., None] * a[:, None, :]
    a_bar = np.exp(z)
    phi = _phi(z)
    b_bar = b_seq * delta_seq[..., None] * phi
    h = np.zeros((g_n, d_ch, n))
    states = np.empty((length, g_n, d_ch, n))
    y = np.empty((g_n, length, d_ch))
    for t in range(length):
        h = h * a_bar[:, t, None, :] + x[:, t, :, None] * b_bar[:, t, None, :]
        states[t] = h
        y[:, t, :] = (h @ c_seq[:, t, :, None])[..., 0]
    saved = (a, b_seq, c_seq, delta_seq, x, z, a_bar, b_bar, phi, states)
    return y, saved


def _selective_backward(saved, dy):
    """Adjoint of `_selective_forward`; returns grads for (a, b, c, delta, x)."""
    a, b_seq, c_seq, delta_seq, x, z, a_bar, b_bar, phi, states = saved
    g_n, length, d_ch = x.shape
    n = a.shape[1]
    adj = np.zeros((g_n, d_ch, n))
    d_c = np.empty_like(c_seq)
    d_abar = np.empty_like(a_bar)
    d_bbar = np.empty_like(b_bar)
    d_x = np.empty_like(x)
    zero_state = np.zeros((g_n, d_ch, n))
    for t in range(length - 1, -1, -1):
        adj += dy[:, t, :, None] * c_seq[:, t, None, :]
        d_c[:, t, :] = (states[t] * dy[:, t, :, None]).sum(axis=1)
        h_prev = states[t - 1] if t > 0 else zero_state
        d_abar[:, t, :] = (adj * h_prev).sum(axis=1)
        d_bbar[:, t, :] = (adj * x[:, t, :, None]).sum(axis=1)
        d_x[:, t, :] = (adj * b_bar[:, t, None, :]).sum(axis=2)
        adj = adj * a_bar[:, t, None, :]
    # a_bar = exp(delta a): route through z = delta * a.
    dz = d_abar * a_bar
    d_delta = (dz * a[:, None, :]).sum(axis=-1)
    d_a = (dz * delta_seq[..., None]).sum(axis=1)
    # b_bar = b * delta * phi(z); d(b_bar)/d(delta) = b * exp(z) exactly.
    d_b = d_bbar * delta_seq[..., None] * phi
    d_delta += (d_bbar * b_seq * a_bar).sum(axis=-1)
    d_a += (d_bbar * b_seq * (delta_seq[..., None] ** 2) * _phi_prime(z)).sum(axis=1)
    return d_a, d_b, d_c, d_delta, d_x


def selective_scan(a: np.ndarray, params: SelectiveParams, x) -> np.ndarray:
    """Input-dependent scan over one sequence (numpy in, numpy out).

    `x` may be (L,) for a single channel or (L, D); the output matches.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] != params.b_seq.shape[0]:
        raise ValueError("sequence lengths disagree")
    y, _ = _selective_forward(
        a[None], params.b_seq[None], params.c_seq[None], params.delta_seq[None], x[None]
    )
    return y[0, :, 0] if squeeze else y[0]


@dataclass(frozen=True)
class SelectiveWeights:
    """Projections that derive per-step scan parameters from the input."""

    w_b: np.ndarray
    w_c: np.ndarray
    w_delta: np.ndarray
    b_delta: float


def selective_projections(x, weights: SelectiveWeights) -> SelectiveParams:
    """b_t = x_t W_b; c_t = x_t W_c; delta_t = softplus(x_t w_delta + bias)."""
    x = np.asarray(x, dtype=np.float64)
    b_seq = x @ weights.w_b
    c_seq = x @ weights.w_c
    pre = x @ weights.w_delta + weights.b_delta
    delta_seq = np.logaddexp(0.0, pre)
    return SelectiveParams(b_seq=b_seq, c_seq=c_seq, delta_seq=delta_seq)


def selective_scan_op(a: Tensor, b_seq: Tensor, c_seq: Tensor,
                      delta_seq: Tensor, x: Tensor) -> Tensor:
    """Tape-recorded grouped selective scan.

    Shapes: a (G, N); b_seq, c_seq (G, L, N); delta_seq (G, L); x (G, L, D).
    Step sizes must be nonnegative; an exact zero (softplus underflow) takes
    the well-defined freeze limit a_bar = 1, b_bar = 0.
    """
    if np.any(delta_seq.data < 0):
        raise ValueError("step sizes must be nonnegative")
    y, saved = _selective_forward(a.data, b_seq.data, c_seq.data, delta_seq.data, x.data)
    _check_finite(y, "selective_scan")
    requires = any(t.requires_grad for t in (a, b_seq, c_seq, delta_seq, x))
    out = Tensor(y, requires_grad=requires)

    def bwd(g):
        d_a, d_b, d_c, d_delta, d_x = _selective_backward(saved, g)
        if a.requires_grad:
            accumulate_grad(a, d_a)
        if b_seq.requires_grad:
            accumulate_grad(b_seq, d_b)
        if c_seq.requires_grad:
            accumulate_grad(c_seq, d_c)
        if delta_seq.requires_grad:
            accumulate_grad(delta_seq, d_delta)
        if x.requires_grad:
            accumulate_grad(x, d_x)

    tape_record(out, bwd)
    return out


def stable_a_init(n: int) -> np.ndarray:
    """Deterministic stable initialization: a_i = -(i + 1), spread timescales."""
    return -np.arange(1.0, n + 1.0)
