"""Selective state-space scanning.

The continuous system h' = A h + B x, y = C h is discretized with a
zero-order hold,

    Ā = exp(ΔA),   B̄ = (ΔA)⁻¹ (exp(ΔA) − I) ΔB,

and run as the recurrence h_k = Ā h_{k-1} + B̄ x_k, y_k = C h_k. A is diagonal
(one row of N negative entries per channel), so the scan costs O(L·N) per
channel. Δ, B and C are produced per token from the input, which makes the scan
selective.

SS2D flattens a feature map along four traversals (row-major and column-major,
each forward and backward), scans each one, maps the results back onto the
grid and sums them.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import stats
from scipy.linalg import expm

from . import ops
from .nn import Module
from .tensor import Parameter, ShapeError, Tensor, default_dtype, grad_enabled, make_node, no_grad

SERIES_THRESHOLD = 1e-6


class ScanOrder(enum.Enum):
    ROW_FORWARD = 0
    ROW_BACKWARD = 1
    COL_FORWARD = 2
    COL_BACKWARD = 3

    def permutation(self, h: int, w: int) -> np.ndarray:
        """Row-major token indices in the order this traversal visits them."""
        grid = np.arange(h * w).reshape(h, w)
        order = grid.ravel() if self in (ScanOrder.ROW_FORWARD, ScanOrder.ROW_BACKWARD) \
            else grid.T.ravel()
        if self in (ScanOrder.ROW_BACKWARD, ScanOrder.COL_BACKWARD):
            order = order[::-1]
        return np.ascontiguousarray(order)


# ---------------------------------------------------------------- discretization

def discretize(A, B, delta):
    """Zero-order hold for diagonal ``A`` (arrays broadcast elementwise).

    Returns ``(A_bar, B_bar)``. Where |ΔA| < 1e-6 the series limit B̄ = ΔB is used.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("discretize: step size delta must be > 0")
    z = delta * A
    a_bar = np.exp(z)
    small = np.abs(z) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, A)
    coef = np.where(small, delta, np.expm1(z) / safe_a)
    return a_bar, coef * B


def discretize_dense(A, B, delta: float):
    """Zero-order hold for a full N×N ``A`` and length-N ``B``.

    Uses the block-matrix exponential exp([[ΔA, ΔB], [0, 0]]), whose top-right
    block equals (ΔA)⁻¹(exp(ΔA) − I)ΔB and stays defined when A is singular.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    if delta <= 0:
        raise ValueError("discretize: step size delta must be > 0")
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = delta * A
    M[:n, n] = delta * B
    E = expm(M)
    return E[:n, :n], E[:n, n]


def recurrence(a_bar, b_bar, c, x, return_states: bool = False):
    """Run h_k = Ā_k ⊙ h_{k-1} + B̄_k x_k, y_k = Σ_n C_k h_k on discretized values.

    Shapes: ``a_bar``/``b_bar`` (L, D, N), ``c`` (L, N) or (L, D, N), ``x`` (L, D).
    Lower-rank inputs broadcast against these.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L, D = x.shape
    if L == 0:
        raise ValueError("recurrence: empty sequence")
    N = max((np.shape(v)[-1] for v in (a_bar, b_bar, c) if np.ndim(v) >= 2), default=1)
    a_bar, b_bar, c = (_to_ldn(v, L, D, N) for v in (a_bar, b_bar, c))
    h = np.zeros((D, N))
    y = np.empty((L, D))
    states = np.empty((L, D, N)) if return_states else None
    for k in range(L):
        h = a_bar[k] * h + b_bar[k] * x[k][:, None]
        y[k] = (c[k] * h).sum(-1)
        if return_states:
            states[k] = h
    return (y, states) if return_states else y


def _to_ldn(v, L: int, D: int, N: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:  # one scalar per token
        v = v[:, None, None]
    elif v.ndim == 2:  # (L, N), shared over channels
        v = v[:, None, :]
    return np.broadcast_to(v, (L, D, N))


# ---------------------------------------------------------------- compiled kernels
# Layout: u, delta, y (nb, D, L); A (D, N); B, C (nb, L, N); states (nb, D, L, N).

@numba.njit(cache=True, fastmath=True)
def _zoh_coef(z, inv_a, dt, ez):
    """(exp(z) - 1) / a given ez = exp(z), with z = dt·a; series form near zero."""
    one = dt * 0 + 1
    if abs(z) < SERIES_THRESHOLD:
        return dt
    if abs(z) < 1e-2:
        return dt * (one + z * (one / 2 + z * (one / 6 + z * (one / 24))))
    return (ez - one) * inv_a


@numba.njit(cache=True, fastmath=True)
def _scan_forward(u, delta, A, B, C, states, store):
    nb, D, L = u.shape
    N = A.shape[1]
    y = np.zeros_like(u)
    h = np.zeros(N, dtype=u.dtype)
    inv_a = np.empty(N, dtype=A.dtype)
    for b in range(nb):
        for d in range(D):
            h[:] = 0
            for n in range(N):
                inv_a[n] = 1 / A[d, n]
            for k in range(L):
                dt = delta[b, d, k]
                x = u[b, d, k]
                acc = h[0] * 0
                for n in range(N):
                    z = dt * A[d, n]
                    ez = math.exp(z)
                    hn = ez * h[n] + _zoh_coef(z, inv_a[n], dt, ez) * B[b, k, n] * x
                    h[n] = hn
                    acc += C[b, k, n] * hn
                y[b, d, k] = acc
                if store:
                    for n in range(N):
                        states[b, d, k, n] = h[n]
    return y


@numba.njit(cache=True, fastmath=True)
def _scan_backward(u, delta, A, B, C, states, dy):
    nb, D, L = u.shape
    N = A.shape[1]
    du = np.zeros_like(u)
    ddelta = np.zeros_like(u)
    dA = np.zeros((D, N), dtype=np.float64)
    dB = np.zeros((nb, L, N), dtype=u.dtype)
    dC = np.zeros((nb, L, N), dtype=u.dtype)
    g = np.zeros(N, dtype=u.dtype)
    inv_a = np.empty(N, dtype=A.dtype)
    dA_row = np.zeros(N, dtype=np.float64)
    for b in range(nb):
        for d in range(D):
            g[:] = 0
            dA_row[:] = 0
            for n in range(N):
                inv_a[n] = 1 / A[d, n]
            for k in range(L - 1, -1, -1):
                dt = delta[b, d, k]
                x = u[b, d, k]
                gy = dy[b, d, k]
                s_du = g[0] * 0
                s_dd = g[0] * 0
                for n in range(N):
                    a = A[d, n]
                    z = dt * a
                    ab = math.exp(z)
                    coef = _zoh_coef(z, inv_a[n], dt, ab)
                    if abs(z) < SERIES_THRESHOLD:
                        dcoef_ddt = ab * 0 + 1
                        dcoef_da = dt * dt / 2
                    else:
                        dcoef_ddt = ab
                        dcoef_da = (dt * ab - coef) * inv_a[n]
                    hk = states[b, d, k, n]
                    hprev = states[b, d, k - 1, n] if k > 0 else hk * 0
                    dC[b, k, n] += gy * hk
                    gn = g[n] + gy * C[b, k, n]
                    bn = B[b, k, n]
                    d_ab = gn * hprev
                    d_coef = gn * bn * x
                    s_du += gn * coef * bn
                    dB[b, k, n] += gn * coef * x
                    s_dd += d_ab * ab * a + d_coef * dcoef_ddt
                    dA_row[n] += d_ab * ab * dt + d_coef * dcoef_da
                    g[n] = gn * ab
                du[b, d, k] = s_du
                ddelta[b, d, k] = s_dd
            for n in range(N):
                dA[d, n] += dA_row[n]
    return du, ddelta, dA, dB, dC


def _check_scan_shapes(u, delta, A, B, C):
    nb, D, L = u.shape
    if L < 1:
        raise ValueError("selective scan: empty sequence")
    N = A.shape[1]
    if delta.shape != u.shape or A.shape != (D, N) or B.shape != (nb, N, L) or C.shape != (nb, N, L):
        raise ShapeError(
            f"selective scan: u {u.shape}, delta {delta.shape}, A {A.shape}, B {B.shape}, C {C.shape}")


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Differentiable selective scan.

    u, delta: (batch, D, L); A: (D, N) diagonal entries; B, C: (batch, N, L).
    Returns y: (batch, D, L). Gradients flow to all five inputs.
    """
    _check_scan_shapes(u, delta, A, B, C)
    dtype = u.dtype
    Bt = np.ascontiguousarray(B.data.transpose(0, 2, 1))
    Ct = np.ascontiguousarray(C.data.transpose(0, 2, 1))
    parents = (u, delta, A, B, C)
    store = any(p.requires_grad for p in parents) and grad_enabled()
    nb, D, L = u.shape
    N = A.shape[1]
    states = np.empty((nb, D, L, N) if store else (1, 1, 1, 1), dtype=dtype)
    y = _scan_forward(u.data, delta.data, A.data, Bt, Ct, states, store)

    def bw(g):
        du, dd, dA, dB, dC = _scan_backward(u.data, delta.data, A.data, Bt, Ct, states,
                                            np.ascontiguousarray(g))
        return (du, dd, dA.astype(dtype), np.ascontiguousarray(dB.transpose(0, 2, 1)),
                np.ascontiguousarray(dC.transpose(0, 2, 1)))

    return make_node(y, parents, bw, "selective_scan")


def selective_scan_1d(x, param_maker: Callable, A) -> np.ndarray:
    """Scan one sequence ``x`` of shape (L, C).

    ``param_maker(x)`` returns per-token ``(delta (L, C), B (L, N), C (L, N))``;
    ``A`` holds the (C, N) diagonal state matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"selective_scan_1d: expected a non-empty (L, C) sequence, got {x.shape}")
    delta, Bm, Cm = (np.asarray(v, dtype=np.float64) for v in param_maker(x))
    if np.any(delta <= 0):
        raise ValueError("selective_scan_1d: delta must be > 0")
    A = np.asarray(A, dtype=np.float64)
    states = np.empty((1, 1, 1, 1))
    y = _scan_forward(np.ascontiguousarray(x.T[None]), np.ascontiguousarray(delta.T[None]), A,
                      np.ascontiguousarray(Bm[None]), np.ascontiguousarray(Cm[None]), states, False)
    return y[0].T


# ---------------------------------------------------------------- SS2D

ScanParams = tuple[Tensor, Tensor, Tensor]


def ss2d_branches(x: Tensor, A: Tensor, params: Sequence[ScanParams]) -> list[Tensor]:
    """Per-direction outputs, each mapped back to the (n, d, h, w) grid.

    ``params[k] = (delta, B, C)`` for ``ScanOrder(k)``, given in row-major token
    order with shapes (n, d, h·w), (n, N, h·w), (n, N, h·w). They are produced
    per token, so they are permuted together with the tokens.
    """
    n, d, h, w = x.shape
    L = h * w
    if L < 1:
        raise ValueError("ss2d: empty feature map")
    tokens = ops.reshape(x, (n, d, L))
    perms = [order.permutation(h, w) for order in ScanOrder]
    us, ds, bs, cs = [], [], [], []
    for perm, (delta, Bm, Cm) in zip(perms, params):
        us.append(ops.permute_tokens(tokens, perm))
        ds.append(ops.permute_tokens(delta, perm))
        bs.append(ops.permute_tokens(Bm, perm))
        cs.append(ops.permute_tokens(Cm, perm))
    y = selective_scan(ops.concat(us, 0), ops.concat(ds, 0), A, ops.concat(bs, 0),
                       ops.concat(cs, 0))
    out = []
    for k, perm in enumerate(perms):
        yk = ops.slice_axis(y, 0, k * n, (k + 1) * n)
        out.append(ops.reshape(ops.permute_tokens(yk, np.argsort(perm)), (n, d, h, w)))
    return out


def ss2d(x: Tensor, A: Tensor, params: Sequence[ScanParams]) -> Tensor:
    """Unweighted sum of the four directional scans; shape-preserving."""
    b = ss2d_branches(x, A, params)
    return (b[0] + b[1]) + (b[2] + b[3])


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SS2D(Module):
    """Four-direction selective scan with input-dependent Δ, B, C.

    The diagonal A (A_ii = −(i+1) at init) is shared by the four directions; each
    direction owns its Δ/B/C projection. Δ = softplus(W u + b).
    """

    def __init__(self, channels: int, state_dim: int = 8, rng: np.random.Generator | None = None,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        rng = rng if rng is not None else np.random.default_rng(0)
        d, N = channels, state_dim
        self.channels, self.state_dim = d, N
        self.A_log = Parameter(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (d, 1))))
        rows = 4 * (d + 2 * N)
        bound = 1.0 / math.sqrt(d)
        self.proj_weight = Parameter(rng.uniform(-bound, bound, (rows, d, 1, 1)))
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), (4, d)))
        bias = np.zeros((4, d + 2 * N))
        bias[:, :d] = _inverse_softplus(dt)
        self.proj_bias = Parameter(bias.reshape(-1))

    def A(self) -> Tensor:
        return ops.neg(ops.exp(self.A_log))

    def scan_params(self, x: Tensor) -> list[ScanParams]:
        n, d, h, w = x.shape
        N = self.state_dim
        proj = ops.conv2d(x, self.proj_weight, self.proj_bias)
        proj = ops.reshape(proj, (n, 4 * (d + 2 * N), h * w))
        out = []
        for k in range(4):
            base = k * (d + 2 * N)
            delta = ops.softplus(ops.slice_channels(proj, base, base + d))
            Bm = ops.slice_channels(proj, base + d, base + d + N)
            Cm = ops.slice_channels(proj, base + d + N, base + d + 2 * N)
            out.append((delta, Bm, Cm))
        return out

    def forward(self, x: Tensor) -> Tensor:
        return ss2d(x, self.A(), self.scan_params(x))


# ---------------------------------------------------------------- quadratic baseline

def quadratic_attention_reference(x, wq=None, wk=None, wv=None, block: int = 1024) -> np.ndarray:
    """Plain softmax self-attention over an (L, C) sequence, O(L²) time.

    Queries are processed in blocks so memory stays O(L·block). Projections
    default to identity.
    """
    x = np.asarray(x, dtype=default_dtype())
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"attention: expected a non-empty (L, C) sequence, got {x.shape}")
    C = x.shape[1]
    eye = np.eye(C, dtype=x.dtype)
    q = x @ (eye if wq is None else np.asarray(wq, dtype=x.dtype))
    k = x @ (eye if wk is None else np.asarray(wk, dtype=x.dtype))
    v = x @ (eye if wv is None else np.asarray(wv, dtype=x.dtype))
    inv = 1.0 / math.sqrt(C)
    out = np.empty_like(v)
    for s in range(0, x.shape[0], block):
        scores = (q[s:s + block] @ k.T) * inv
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[s:s + block] = scores @ v
    return out


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchRow:
    tokens: int
    ss2d_ns: int
    attention_ns: int


def _grid_for(tokens: int) -> tuple[int, int]:
    side = int(round(math.sqrt(tokens)))
    return (side, side) if side * side == tokens else (1, tokens)


def _best_time(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return int(best)


def bench_scan(lengths: Sequence[int], channels: int = 16, state_dim: int = 8,
               repeats: int = 3, seed: int = 0, attention: bool = True) -> list[BenchRow]:
    """Wall time of an SS2D forward pass and of the quadratic reference per token count."""
    rng = np.random.default_rng(seed)
    layer = SS2D(channels, state_dim, rng=rng)
    # warm the compiled kernels so compile time is not measured
    with no_grad():
        layer(Tensor(rng.standard_normal((1, channels, 2, 2)).astype(default_dtype())))
    rows = []
    for L in lengths:
        h, w = _grid_for(L)
        x = Tensor(rng.standard_normal((1, channels, h, w)).astype(default_dtype()))
        seq = x.data.reshape(channels, L).T.copy()
        with no_grad():
            t_scan = _best_time(lambda: layer(x), repeats)
        t_att = _best_time(lambda: quadratic_attention_reference(seq), repeats) if attention else 0
        rows.append(BenchRow(L, t_scan, t_att))
    return rows


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w") as f:
        f.write("tokens,ss2d_ns,attention_ns\n")
        for r in rows:
            f.write(f"{r.tokens},{r.ss2d_ns},{r.attention_ns}\n")


def linear_fit_r2(tokens: Sequence[float], times: Sequence[float]) -> float:
    """R² of an ordinary least-squares line through (tokens, times)."""
    return float(stats.linregress(np.asarray(tokens, float), np.asarray(times, float)).rvalue ** 2)
