"""Two-input fuzzy network with singleton consequents and gradient training.

Five layers: input pass-through, Gaussian fuzzification (five terms per
input), product rule firing (25 rules), normalization over all rules, and
a weighted sum of singleton consequents. Centers, widths, and singletons
are all free parameters trained by steepest descent on a squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroFiringError

N_TERMS = 5
N_RULES = N_TERMS * N_TERMS
N_SINGLETONS = 7

#: Lower bound that keeps membership widths positive through training.
DEFAULT_DELTA_FLOOR = 1e-4

DEFAULT_LEARNING_RATE = 0.01

#: Totals below this are reported as a zero firing strength.
_FIRING_FLOOR = 1e-300

#: Flat parameter layout: 10 centers, then 10 widths, then 7 singletons.
N_PARAMS = 27


@dataclass
class MembershipFn:
    """Gaussian membership term with center m and width delta.

    The grade is exp(-((u - m) / delta)^2); the exponent carries no 1/2
    factor, so delta is the distance at which the grade falls to 1/e.
    """

    m: float
    delta: float


def mf_eval(u: float, mf: MembershipFn) -> float:
    """Membership grade of input u, in (0, 1]."""
    z = (u - mf.m) / mf.delta
    return math.exp(-z * z)


@dataclass(frozen=True)
class RuleBase:
    """5x5 grid mapping term pairs to consequent singleton labels 1..7.

    Entries are constant along anti-diagonals: the consequent depends only
    on the combined level i + j of the two input terms, falling from label 7
    at (1, 1) to label 1 at (5, 5).
    """

    consequent_index: np.ndarray

    def consequent(self, i: int, j: int) -> int:
        """Singleton label for input-1 term i and input-2 term j (1-based)."""
        return int(self.consequent_index[i - 1, j - 1])


def build_rule_base() -> RuleBase:
    """Anti-diagonal rule table: consequent(i, j) = clamp(10 - (i + j), 1, 7)."""
    grid = np.empty((N_TERMS, N_TERMS), dtype=int)
    for i in range(N_TERMS):
        for j in range(N_TERMS):
            grid[i, j] = min(max(10 - (i + 1) - (j + 1), 1), N_SINGLETONS)
    return RuleBase(grid)


@dataclass
class ForwardTrace:
    """Layer-by-layer values of one forward pass, retained for training."""

    in1: float
    in2: float
    mu1: np.ndarray  # (5,) membership grades of input 1
    mu2: np.ndarray  # (5,) membership grades of input 2
    firing: np.ndarray  # (5, 5) rule firing strengths
    total: float  # sum of all 25 firing strengths
    normalized: np.ndarray  # (5, 5), sums to 1
    out: float


@dataclass
class AnfisNet:
    """Trainable two-input/one-output network.

    A single instance belongs to one adapter; training mutates it in place.
    """

    mfs_input1: list[MembershipFn]
    mfs_input2: list[MembershipFn]
    rules: RuleBase
    singletons: np.ndarray
    eta: float = DEFAULT_LEARNING_RATE
    delta_floor: float = DEFAULT_DELTA_FLOOR

    def __post_init__(self) -> None:
        if len(self.mfs_input1) != N_TERMS or len(self.mfs_input2) != N_TERMS:
            raise ValueError(f"each input needs exactly {N_TERMS} membership terms")
        self.singletons = np.asarray(self.singletons, dtype=float).copy()
        if self.singletons.shape != (N_SINGLETONS,):
            raise ValueError(f"expected {N_SINGLETONS} consequent singletons")

    @staticmethod
    def _memberships(u: float, mfs: list[MembershipFn]) -> np.ndarray:
        m = np.array([mf.m for mf in mfs])
        d = np.array([mf.delta for mf in mfs])
        z = (u - m) / d
        return np.exp(-z * z)

    def forward(self, in1: float, in2: float) -> tuple[float, ForwardTrace]:
        """Evaluate the network and keep the layer trace for training.

        Raises ZeroFiringError if every rule firing strength underflowed;
        callers are expected to keep inputs within a sane multiple of the
        membership widths.
        """
        mu1 = self._memberships(in1, self.mfs_input1)
        mu2 = self._memberships(in2, self.mfs_input2)
        firing = np.outer(mu1, mu2)
        total = float(firing.sum())
        if total < _FIRING_FLOOR:
            raise ZeroFiringError(f"zero total firing at inputs ({in1}, {in2})")
        normalized = firing / total
        out = float(np.sum(normalized * self.singletons[self.rules.consequent_index - 1]))
        return out, ForwardTrace(in1, in2, mu1, mu2, firing, total, normalized, out)

    def output_gradients(
        self, trace: ForwardTrace
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Gradients of the output w.r.t. every free parameter at the trace.

        Returns:
            (d_singletons, d_m1, d_delta1, d_m2, d_delta2) with shapes
            (7,), (5,), (5,), (5,), (5,).
        """
        grid = self.rules.consequent_index - 1
        wgrid = self.singletons[grid]

        # d(out)/d(w_l): total normalized firing routed to singleton l.
        d_w = np.zeros(N_SINGLETONS)
        np.add.at(d_w, grid, trace.normalized)

        # d(out)/d(mu): quotient rule against the normalization layer.
        excess = wgrid - trace.out
        g_mu1 = excess @ trace.mu2 / trace.total
        g_mu2 = excess.T @ trace.mu1 / trace.total

        m1 = np.array([mf.m for mf in self.mfs_input1])
        d1 = np.array([mf.delta for mf in self.mfs_input1])
        m2 = np.array([mf.m for mf in self.mfs_input2])
        d2 = np.array([mf.delta for mf in self.mfs_input2])

        diff1 = trace.in1 - m1
        diff2 = trace.in2 - m2
        d_m1 = g_mu1 * trace.mu1 * 2.0 * diff1 / d1**2
        d_delta1 = g_mu1 * trace.mu1 * 2.0 * diff1**2 / d1**3
        d_m2 = g_mu2 * trace.mu2 * 2.0 * diff2 / d2**2
        d_delta2 = g_mu2 * trace.mu2 * 2.0 * diff2**2 / d2**3
        return d_w, d_m1, d_delta1, d_m2, d_delta2

    def train_step(self, trace: ForwardTrace, e: float, ds_dout: float) -> "AnfisNet":
        """One steepest-descent step on E = e^2 / 2.

        Args:
            trace: the forward pass the error was observed at.
            e: signed training error.
            ds_dout: sensitivity of the error signal to the network output,
                chained into every parameter gradient.

        Returns:
            self, updated in place. A zero step (e or ds_dout zero, or a
            zero learning rate) leaves every parameter untouched.
        """
        g = self.eta * e * ds_dout
        if g == 0.0:
            return self
        d_w, d_m1, d_delta1, d_m2, d_delta2 = self.output_gradients(trace)
        self.singletons -= g * d_w
        for mf, dm, dd in zip(self.mfs_input1, d_m1, d_delta1):
            mf.m -= g * dm
            mf.delta = max(mf.delta - g * dd, self.delta_floor)
        for mf, dm, dd in zip(self.mfs_input2, d_m2, d_delta2):
            mf.m -= g * dm
            mf.delta = max(mf.delta - g * dd, self.delta_floor)
        return self


def net_to_params(net: AnfisNet) -> list[float]:
    """Flatten a network to 27 scalars: 10 centers, 10 widths, 7 singletons."""
    centers = [mf.m for mf in net.mfs_input1] + [mf.m for mf in net.mfs_input2]
    widths = [mf.delta for mf in net.mfs_input1] + [mf.delta for mf in net.mfs_input2]
    return [float(v) for v in centers + widths + list(net.singletons)]


def net_from_params(
    params: list[float],
    eta: float = DEFAULT_LEARNING_RATE,
    delta_floor: float = DEFAULT_DELTA_FLOOR,
) -> AnfisNet:
    """Rebuild a network from the layout produced by net_to_params."""
    if len(params) != N_PARAMS:
        raise ValueError(f"expected {N_PARAMS} parameters, got {len(params)}")
    centers = params[:10]
    widths = params[10:20]
    singletons = np.array(params[20:], dtype=float)
    mfs1 = [MembershipFn(centers[i], widths[i]) for i in range(N_TERMS)]
    mfs2 = [MembershipFn(centers[N_TERMS + i], widths[N_TERMS + i]) for i in range(N_TERMS)]
    return AnfisNet(mfs1, mfs2, build_rule_base(), singletons, eta, delta_floor)
