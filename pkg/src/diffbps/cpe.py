"""Carrier phase estimation by blind phase search (BPS).

Both the classic hard-decision BPS and the softmin relaxation share one
pipeline::

    distances -> window_sums -> hard_select | soft_select -> unwrap

Sequences run along the last axis of ``z``; any leading axes are
independent batch dimensions. Estimated phases are *corrections*, i.e. the
corrected symbol is ``z * exp(1j * phase)``.

:func:`differentiable_bps` runs the same pipeline on :class:`Tensor`
values so that gradients reach the received symbols and constellation
points.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import ConfigError
from .constellation import Constellation

class BpsMode(str, Enum):
    HARD = "hard"
    SOFT = "soft"


class InsufficientLengthError(ValueError):
    pass


@dataclass(frozen=True)
class BpsConfig:
    num_test_phases: int = 60
    half_window: int = 60
    mode: BpsMode = BpsMode.HARD
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", BpsMode(self.mode))
        if self.num_test_phases < 2:
            raise ConfigError("num_test_phases must be >= 2")
        if self.half_window < 0:
            raise ConfigError("half_window must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    @property
    def window_length(self) -> int:
        return 2 * self.half_window + 1

    @property
    def phases(self) -> np.ndarray:
        return test_phase_grid(self.num_test_phases)


@dataclass
class CpeOutput:
    corrected: np.ndarray
    phase_estimates: np.ndarray
    valid_mask: np.ndarray


def test_phase_grid(num_phases: int) -> np.ndarray:
    """``-pi + 2*pi*(b + 1/2)/L`` for ``b = 0..L-1``: interior, symmetric about 0."""
    if num_phases < 2:
        raise ConfigError("need at least 2 test phases")
    b = np.arange(num_phases)
    return -np.pi + 2.0 * np.pi * (b + 0.5) / num_phases


test_phase_grid.__test__ = False  # keep pytest from collecting it


def _points(c) -> np.ndarray:
    return c.points if isinstance(c, Constellation) else np.asarray(c, dtype=np.complex128).reshape(-1)


@numba.njit(cache=True)
def _bps_kernel(zr, zi, cos_b, sin_b, pr, pi, d_out, idx_out):
    # phases outer per symbol, points inner; exact distances, strict < keeps the lowest index on ties
    n = zr.shape[0]
    nl = cos_b.shape[0]
    npts = pr.shape[0]
    for k in range(n):
        a = zr[k]
        c = zi[k]
        for b in range(nl):
            rr = a * cos_b[b] - c * sin_b[b]
            ri = a * sin_b[b] + c * cos_b[b]
            best = np.inf
            arg = 0
            for j in range(npts):
                dr = rr - pr[j]
                di = ri - pi[j]
                dd = dr * dr + di * di
                if dd < best:
                    best = dd
                    arg = j
            d_out[k, b] = best
            idx_out[k, b] = arg


def _run_kernel(z, points, phases):
    z = np.asarray(z, dtype=np.complex128)
    points = np.asarray(points, dtype=np.complex128).reshape(-1)
    phases = np.asarray(phases, dtype=np.float64)
    flat = z.reshape(-1)
    d = np.empty((flat.size, phases.size))
    idx = np.empty((flat.size, phases.size), dtype=np.intp)
    _bps_kernel(
        np.ascontiguousarray(flat.real), np.ascontiguousarray(flat.imag),
        np.cos(phases), np.sin(phases),
        np.ascontiguousarray(points.real), np.ascontiguousarray(points.imag),
        d, idx,
    )
    shape = z.shape + (phases.size,)
    return d.reshape(shape), idx.reshape(shape)


def nearest_rotated(z, points, phases) -> np.ndarray:
    """Nearest point index for every ``z * exp(1j*phase)``; shape ``z.shape + (L,)``."""
    return _run_kernel(z, points, phases)[1]


def distances(z, c, phases, return_indices: bool = False):
    """Squared distance of each rotated sample to its nearest constellation point.

    ``d[..., k, b] = min_p |z[..., k] exp(1j phases[b]) - p|^2``. O(K*L*M)
    work in a compiled loop with no per-symbol allocation.
    """
    d, idx = _run_kernel(z, _points(c), phases)
    return (d, idx) if return_indices else d


def window_sums(d, half_window: int, axis: int = 0) -> np.ndarray:
    """Sum over ``k-N..k+N`` along ``axis``, truncated at the sequence edges.

    O(K) per column via prefix sums. Integer input stays integer (exact).
    """
    d = np.asarray(d)
    if half_window == 0:
        return d.copy()
    d = np.moveaxis(d, axis, 0)
    k = d.shape[0]
    prefix = np.zeros((k + 1,) + d.shape[1:], dtype=d.dtype)
    np.cumsum(d, axis=0, out=prefix[1:])
    pos = np.arange(k)
    hi = np.minimum(pos + half_window, k - 1) + 1
    lo = np.maximum(pos - half_window, 0)
    return np.moveaxis(prefix[hi] - prefix[lo], 0, axis)


def hard_select(s, phases) -> np.ndarray:
    """Test phase minimizing each row of ``s`` (last axis); ties -> lowest b."""
    phases = np.asarray(phases, dtype=np.float64)
    return phases[np.argmin(np.asarray(s), axis=-1)]


def softmin_t(x, t: float, axis: int = -1) -> np.ndarray:
    """``exp(-x/t) / sum(exp(-x/t))`` along ``axis``, min-shifted for stability."""
    if t <= 0:
        raise ConfigError("temperature must be positive")
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise FloatingPointError("NaN in softmin input")
    e = np.exp(-(x - x.min(axis=axis, keepdims=True)) / t)
    return e / e.sum(axis=axis, keepdims=True)


def soft_select(s, phases, t: float) -> np.ndarray:
    """Softmin-weighted average of the test phases along the last axis."""
    return softmin_t(s, t, axis=-1) @ np.asarray(phases, dtype=np.float64)


def unwrap(phi, axis: int = -1) -> np.ndarray:
    """Remove 2*pi jumps: each output is the 2*pi-shift of its input nearest the previous output."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[axis] == 0:
        raise ValueError("unwrap of an empty sequence")
    two_pi = 2.0 * np.pi
    moved = np.moveaxis(phi, axis, 0)
    # out[k] = phi[k] + 2pi*n_k with n_k = round((out[k-1] - phi[k])/2pi); since out[k-1] = phi[k-1] + 2pi*n_{k-1},
    # n_k = n_{k-1} + round((phi[k-1] - phi[k])/2pi), a cumulative sum of per-step integer corrections
    steps = np.round((moved[:-1] - moved[1:]) / two_pi)
    shifts = np.zeros_like(moved)
    np.cumsum(steps, axis=0, out=shifts[1:])
    return np.moveaxis(moved + two_pi * shifts, 0, axis)


def valid_mask(length: int, half_window: int) -> np.ndarray:
    mask = np.zeros(length, dtype=bool)
    mask[half_window : length - half_window] = True
    return mask


def _check_length(length: int, half_window: int) -> None:
    if length <= 2 * half_window:
        raise InsufficientLengthError(
            f"sequence of {length} symbols is too short for a {2 * half_window + 1}-symbol window"
        )


def bps(z, c, cfg: BpsConfig) -> CpeOutput:
    """Blind phase search on ``z`` (last axis = time) in hard or soft mode."""
    z = np.asarray(z, dtype=np.complex128)
    _check_length(z.shape[-1], cfg.half_window)
    phases = cfg.phases
    s = window_sums(distances(z, c, phases), cfg.half_window, axis=-2)
    if cfg.mode is BpsMode.HARD:
        est = hard_select(s, phases)
    else:
        est = soft_select(s, phases, cfg.temperature)
    est = unwrap(est, axis=-1)
    mask = np.broadcast_to(valid_mask(z.shape[-1], cfg.half_window), z.shape)
    return CpeOutput(z * np.exp(1j * est), est, mask)


def temperature_schedule(step: int, total_steps: int, t_start: float = 1.0, t_end: float = 0.001) -> float:
    """Geometric decay from ``t_start`` at step 0 to ``t_end`` at ``total_steps``."""
    if t_end <= 0:
        raise ConfigError("t_end must be positive")
    if t_start < t_end:
        raise ConfigError("t_start must be >= t_end")
    if not 0 <= step <= max(total_steps, 0):
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return t_start
    return t_start * (t_end / t_start) ** (step / total_steps)


# -- differentiable pipeline ------------------------------------------------
def window_sum_tensor(d: Tensor, half_window: int, axis: int) -> Tensor:
    # the truncated window operator is symmetric, so its adjoint is itself
    return ad.custom(
        window_sums(d.value, half_window, axis),
        (d, lambda g: window_sums(g, half_window, axis)),
    )


def softmin_tensor(x: Tensor, t: float, axis: int = -1) -> Tensor:
    y = softmin_t(x.value, t, axis)

    def vjp(g):
        return -(y / t) * (g - (g * y).sum(axis=axis, keepdims=True))

    return ad.custom(y, (x, vjp))


def soft_select_tensor(s: Tensor, phases, t: float) -> Tensor:
    w = softmin_tensor(s, t, axis=-1)
    return ad.tsum(w * np.asarray(phases, dtype=np.float64), axis=-1)


def distances_tensor(z_re: Tensor, z_im: Tensor, p_re: Tensor, p_im: Tensor, phases) -> Tensor:
    """Differentiable distance matrix; the nearest-point choice is held constant."""
    phases = np.asarray(phases, dtype=np.float64)
    idx = nearest_rotated(z_re.value + 1j * z_im.value, p_re.value + 1j * p_im.value, phases)
    cos_b, sin_b = np.cos(phases), np.sin(phases)
    zr = ad.reshape(z_re, z_re.shape + (1,))
    zi = ad.reshape(z_im, z_im.shape + (1,))
    rr = zr * cos_b - zi * sin_b
    ri = zr * sin_b + zi * cos_b
    return ad.square(rr - ad.take(p_re, idx)) + ad.square(ri - ad.take(p_im, idx))


def differentiable_bps(z_re: Tensor, z_im: Tensor, p_re: Tensor, p_im: Tensor, cfg: BpsConfig,
                       temperature: float | None = None):
    """BPS on tensors; returns ``(corrected_re, corrected_im, phase, valid_mask)``.

    In soft mode the estimate is differentiable in ``z`` and the points. The
    2*pi unwrap shifts are added as constants, so gradients pass through them
    unchanged. In hard mode the phase is a constant.
    """
    length = z_re.shape[-1]
    _check_length(length, cfg.half_window)
    phases = cfg.phases
    d = distances_tensor(z_re, z_im, p_re, p_im, phases)
    s = window_sum_tensor(d, cfg.half_window, axis=-2)
    if cfg.mode is BpsMode.HARD:
        est = Tensor(unwrap(hard_select(s.value, phases), axis=-1))
    else:
        t = cfg.temperature if temperature is None else temperature
        raw = soft_select_tensor(s, phases, t)
        est = raw + (unwrap(raw.value, axis=-1) - raw.value)
    c, sn = ad.cos(est), ad.sin(est)
    out_re = z_re * c - z_im * sn
    out_im = z_re * sn + z_im * c
    mask = np.broadcast_to(valid_mask(length, cfg.half_window), z_re.shape)
    return out_re, out_im, est, mask

