"""Error-aware adaptive sampling over motion bins."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

ALPHA_INIT = (0.8, 0.1, 0.1)       # failure, tracking, interaction
ALPHA_TARGET = (0.05, 0.30, 0.65)
THRESHOLDS = (350.0, 500.0)


def gaussian_kernel(size=3, sigma=1.0):
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    x = np.arange(size) - size // 2
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def smooth_errors(raw, size=3, sigma=1.0):
    """Non-causal Gaussian smoothing along bins with mirrored edges.

    Accepts (S,) or (S, 3); smoothing runs along the first axis.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[0] == 0:
        raise ValueError("need at least one bin")
    if np.any(raw < 0):
        raise ValueError("errors must be non-negative")
    # scipy "reflect" repeats the edge sample: (d c b a | a b c d | d c b a)
    return convolve1d(raw, gaussian_kernel(size, sigma), axis=0, mode="reflect")


def curriculum_alpha(l_max, alpha_init=ALPHA_INIT, alpha_target=ALPHA_TARGET, thresholds=THRESHOLDS):
    if l_max < 0:
        raise ValueError("episode length must be non-negative")
    lo, hi = thresholds
    a0 = np.asarray(alpha_init, dtype=float)
    a1 = np.asarray(alpha_target, dtype=float)
    if l_max < lo:
        return a0.copy()
    if l_max >= hi:
        return a1.copy()
    u = (l_max - lo) / (hi - lo)
    return (1.0 - u) * a0 + u * a1


@dataclass
class CurriculumState:
    errors: np.ndarray                     # (S, 3) smoothed [fail, track, inter]
    l_max: float = 0.0
    eta: float = 0.05
    alpha_init: tuple = ALPHA_INIT
    alpha_target: tuple = ALPHA_TARGET
    thresholds: tuple = THRESHOLDS
    alpha_override: np.ndarray = field(default=None)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.ndim != 2 or self.errors.shape[1] != 3 or self.errors.shape[0] < 1:
            raise ValueError("errors must have shape (S, 3) with S >= 1")
        if np.any(self.errors < 0) or not np.all(np.isfinite(self.errors)):
            raise ValueError("errors must be finite and non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        for a in (self.alpha_init, self.alpha_target):
            if abs(sum(a) - 1.0) > 1e-12:
                raise ValueError("alpha vectors must sum to 1")

    @property
    def alpha(self):
        if self.alpha_override is not None:
            return np.asarray(self.alpha_override, dtype=float)
        return curriculum_alpha(self.l_max, self.alpha_init, self.alpha_target, self.thresholds)


def sampling_distribution(state):
    """P(s) = eta/S + (1 - eta) sum_k alpha_k e_k(s) / sum_j e_k(j)."""
    S = state.errors.shape[0]
    mass = state.errors.sum(axis=0)
    shares = np.where(mass > 0, state.errors / np.where(mass > 0, mass, 1.0), 1.0 / S)
    p = state.eta / S + (1.0 - state.eta) * shares @ state.alpha
    return p / p.sum()


def time_bins(n_frames, bin_frames):
    """Uniform time bins as (start, stop) frame ranges."""
    if bin_frames < 1:
        raise ValueError("bin width must be at least one frame")
    return [(s, min(s + bin_frames, n_frames)) for s in range(0, n_frames, bin_frames)]
