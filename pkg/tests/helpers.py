"""Independent oracles used across the test modules.

Everything here recomputes quantities by a different route than the package
code: central finite differences for Jacobians and gradients, a rule-by-rule
scalar loop for the fuzzy forward pass, a textbook Kalman filter with an
explicit matrix inverse, and a deterministic residual stream whose sample
covariance is known in closed form.
"""

from __future__ import annotations

import math

import numpy as np

from fuzzyloc.adaptation import AdaptationConfig, CovarianceAdapter
from fuzzyloc.anfis import AnfisNet, MembershipFn, build_rule_base, net_from_params, net_to_params
from fuzzyloc.ekf import CovPair, InnovationRecord
from fuzzyloc.models import ControlInput, Pose, wrap_angle


def fd_jacobian(f, x, h=1e-6, wrap_rows=()):
    """Central-difference Jacobian of f: R^n -> R^m at x.

    Rows listed in wrap_rows hold angles; their differences are wrapped so
    evaluation points near +-pi do not produce spurious 2*pi jumps.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.zeros((f0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        diff = np.asarray(f(x + dx), dtype=float) - np.asarray(f(x - dx), dtype=float)
        for row in wrap_rows:
            diff[row] = wrap_angle(diff[row])
        jac[:, j] = diff / (2.0 * h)
    return jac


def anfis_forward_brute(net: AnfisNet, in1: float, in2: float) -> float:
    """Rule-by-rule forward pass, written independently of the array code."""
    num = 0.0
    den = 0.0
    for i in range(1, 6):
        mf1 = net.mfs_input1[i - 1]
        mu1 = math.exp(-(((in1 - mf1.m) / mf1.delta) ** 2))
        for j in range(1, 6):
            mf2 = net.mfs_input2[j - 1]
            mu2 = math.exp(-(((in2 - mf2.m) / mf2.delta) ** 2))
            firing = mu1 * mu2
            num += firing * float(net.singletons[net.rules.consequent(i, j) - 1])
            den += firing
    return num / den


def anfis_analytic_gradients(net: AnfisNet, trace) -> np.ndarray:
    """Analytic output gradients flattened into the 27-scalar param layout."""
    d_w, d_m1, d_delta1, d_m2, d_delta2 = net.output_gradients(trace)
    return np.concatenate([d_m1, d_m2, d_delta1, d_delta2, d_w])


def anfis_fd_gradients(net: AnfisNet, in1: float, in2: float, h: float = 1e-6) -> np.ndarray:
    """Output gradients w.r.t. all 27 parameters by central differences."""
    params = net_to_params(net)
    grads = np.zeros(len(params))
    for k in range(len(params)):
        hk = h * max(1.0, abs(params[k]))
        hi = list(params)
        lo = list(params)
        hi[k] += hk
        lo[k] -= hk
        out_hi, _ = net_from_params(hi, eta=net.eta, delta_floor=net.delta_floor).forward(in1, in2)
        out_lo, _ = net_from_params(lo, eta=net.eta, delta_floor=net.delta_floor).forward(in1, in2)
        grads[k] = (out_hi - out_lo) / (2.0 * hk)
    return grads


def random_net(rng, singleton_span: float = 2.0) -> AnfisNet:
    """Well-conditioned random network: ordered centers, moderate widths."""
    mfs1 = [MembershipFn(float(m), float(d)) for m, d in zip(
        np.sort(rng.uniform(-3.0, 3.0, 5)), rng.uniform(0.6, 2.0, 5))]
    mfs2 = [MembershipFn(float(m), float(d)) for m, d in zip(
        np.sort(rng.uniform(-3.0, 3.0, 5)), rng.uniform(0.6, 2.0, 5))]
    singletons = rng.uniform(-singleton_span, singleton_span, 7)
    return AnfisNet(mfs1, mfs2, build_rule_base(), singletons)


def random_pose(rng, span: float = 50.0) -> Pose:
    return Pose(
        float(rng.uniform(-span, span)),
        float(rng.uniform(-span, span)),
        float(rng.uniform(-math.pi, math.pi)),
    )


def random_control(rng) -> ControlInput:
    return ControlInput(float(rng.uniform(0.2, 5.0)), float(rng.uniform(-0.5, 0.5)))


class LinearKF:
    """Textbook Kalman filter with an explicit inverse, as an oracle."""

    def __init__(self, x0, P0):
        self.x = np.array(x0, dtype=float)
        self.P = np.array(P0, dtype=float)

    def predict(self, F, Q):
        self.x = F @ self.x
        self.P = F @ self.P @ F.T + Q

    def update(self, C, R, z):
        S = C @ self.P @ C.T + R
        K = self.P @ C.T @ np.linalg.inv(S)
        self.x = self.x + K @ (z - C @ self.x)
        self.P = (np.eye(self.x.size) - K @ C) @ self.P


def alternating_residuals(sigma1: float, sigma2: float) -> list[np.ndarray]:
    """Four-residual cycle whose per-channel second moment is exactly sigma^2.

    Every element has |r_i| = sigma_i, so the diagonal of the windowed outer
    product average equals diag(sigma1^2, sigma2^2) for any window length;
    the alternating signs keep the off-diagonal near zero.
    """
    return [
        np.array([+sigma1, +sigma2]),
        np.array([-sigma1, -sigma2]),
        np.array([+sigma1, -sigma2]),
        np.array([-sigma1, +sigma2]),
    ]


def drive_r_adapter(
    r0_diag,
    true_sigmas,
    n_steps: int,
    config: AdaptationConfig | None = None,
):
    """Feed an R-mode adapter a frozen surrogate stream.

    The filter's S is taken to be R itself (no state-uncertainty term) while
    the actual residuals come from alternating_residuals, so the mismatch is
    exactly R - diag(true_sigmas^2) on every evaluated step.

    Returns:
        (dom_diag, r_diag): arrays of shape (n_steps, 2); dom rows are NaN on
        warm-up steps.
    """
    cov = CovPair(np.diag([0.09, 0.0027]), np.diag(np.asarray(r0_diag, dtype=float)))
    adapter = CovarianceAdapter("r", cov, config)
    pattern = alternating_residuals(*true_sigmas)
    G_u = np.zeros((3, 2))
    doms = np.full((n_steps, 2), np.nan)
    rs = np.empty((n_steps, 2))
    for k in range(n_steps):
        rec = InnovationRecord(
            residual=pattern[k % 4].copy(),
            S=cov.R.copy(),
            landmark_id=1,
            timestep=k,
            accepted=True,
        )
        cov, trace = adapter.after_update([rec], G_u, cov)
        if trace.active:
            doms[k] = trace.dom_diag
        rs[k] = (cov.R[0, 0], cov.R[1, 1])
    return doms, rs
