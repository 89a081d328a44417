"""Adaptive Dormand-Prince 5(4) stepper for large array-valued ODEs.

Steps are clipped so that every requested checkpoint is landed on exactly;
no interpolation is used.  Stage combinations and the error norm are fused
single passes over the state, which matters once the state holds millions of
entries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.zeros((7, 7))
A[1, :1] = [1 / 5]
A[2, :2] = [3 / 40, 9 / 40]
A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
B5 = A[6].copy()
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class StepUnderflowError(RuntimeError):
    pass


@numba.njit(cache=True)
def _combine(out, y, h, coef, k, nstage):
    # out = y + h * sum_j coef[j] k[j]
    n = y.size
    for i in range(n):
        acc = y[i]
        for j in range(nstage):
            c = coef[j]
            if c != 0.0:
                acc += (h * c) * k[j, i]
        out[i] = acc


@numba.njit(cache=True)
def _error_norm(y0, y1, h, k, e, rtol, atol):
    n = y0.size
    total = 0.0
    for i in range(n):
        err = 0.0 * k[0, i]
        for j in range(7):
            if e[j] != 0.0:
                err += (h * e[j]) * k[j, i]
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        total += (abs(err) / sc) ** 2
    return math.sqrt(total / n)


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    rhs_calls: int = 0
    h_min: float = math.inf
    h_max: float = 0.0

    def as_dict(self) -> dict:
        return {"accepted": self.accepted, "rejected": self.rejected, "rhs_calls": self.rhs_calls,
                "h_min": float(self.h_min) if self.accepted else 0.0, "h_max": float(self.h_max)}


@dataclass
class Solution:
    times: np.ndarray
    states: list
    stats: StepStats = field(default_factory=StepStats)


def _rms(x: np.ndarray, scale: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(x / scale) ** 2)))


def _initial_step(f, t0, y0, f0, rtol, atol, span) -> float:
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0, scale), _rms(f0, scale)
    h0 = 1e-6 * span if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms(f1 - f0, scale) / h0
    h1 = max(1e-6 * span, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def dopri5(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    checkpoints: Sequence[float],
    t0: float = 0.0,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    h_init: float | None = None,
    h_max: float | None = None,
    on_checkpoint: Callable[[float, np.ndarray], None] | None = None,
) -> Solution:
    """Integrate y' = f(t, y) from t0 through the sorted ``checkpoints``.

    ``f`` receives and returns arrays shaped like ``y0``.  Returns copies of
    the state at each checkpoint; ``on_checkpoint`` may raise to abort.
    """
    cps = np.asarray(checkpoints, float)
    if cps.size == 0:
        raise ValueError("need at least one checkpoint")
    if np.any(np.diff(cps) < 0) or cps[0] < t0:
        raise ValueError("checkpoints must be sorted and >= t0")
    shape = np.shape(y0)
    dtype = np.result_type(np.asarray(y0).dtype, np.float64)
    stats = StepStats()

    def rhs(t, yflat):
        stats.rhs_calls += 1
        return np.asarray(f(t, yflat.reshape(shape)), dtype=dtype).reshape(-1)

    y = np.array(y0, dtype=dtype).reshape(-1)
    n = y.size
    k = np.empty((7, n), dtype=dtype)
    stage = np.empty(n, dtype=dtype)
    t = t0
    out = []
    k[0] = rhs(t, y)
    span = cps[-1] - t0
    if h_init is not None:
        h = h_init
    elif span > 0:
        h = _initial_step(rhs, t, y, k[0], rtol, atol, span)
    else:
        h = 0.0
    if h_max is not None:
        h = min(h, h_max)
    for target in cps:
        while t < target:
            h_try = min(h, target - t)
            # do not leave a sliver before the checkpoint
            if target - t - h_try < 0.01 * h_try:
                h_try = target - t
            if h_try < 1e-14 * max(abs(t), abs(target)):
                raise StepUnderflowError(f"step size underflow at t={t:.6e} (h={h_try:.3e})")
            for s in range(1, 7):
                _combine(stage, y, h_try, A[s], k, s)
                k[s] = rhs(t + C[s] * h_try, stage)
            # stage 6 argument is the 5th-order solution (FSAL)
            en = _error_norm(y, stage, h_try, k, E, rtol, atol)
            if en <= 1.0:
                t = target if h_try == target - t else t + h_try
                y, stage = stage, y
                k[0] = k[6]
                stats.accepted += 1
                stats.h_min = min(stats.h_min, h_try)
                stats.h_max = max(stats.h_max, h_try)
                fac = MAX_FACTOR if en == 0 else min(MAX_FACTOR, SAFETY * en ** -0.2)
                clipped = h_try < h
                h = max(h, h_try * fac) if clipped else h_try * fac
            else:
                stats.rejected += 1
                h = h_try * max(MIN_FACTOR, SAFETY * en ** -0.2)
            if h_max is not None:
                h = min(h, h_max)
        y_out = y.reshape(shape)
        if on_checkpoint is not None:
            on_checkpoint(float(target), y_out)
        out.append(y_out.copy())
    return Solution(cps.copy(), out, stats)
