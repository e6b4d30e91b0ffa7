"""Dense log-barrier solver for second-order-cone feasibility problems.

The system to decide is::

    || A_i x + b_i ||  <=  c_i^T x + d_i        (cones)
    sum_j w_qj x_j^2   <   1                     (ellipsoidal bounds)

It is embedded in the phase-one problem ``min t`` subject to the cones
relaxed by ``t`` and solved along the central path of
``tau * t + barrier``. The barrier parameter is ``nu = 2 * n_cones +
n_quad``, so a centred point at weight ``tau`` is within ``nu / tau`` of the
optimum. That gives two stopping rules:

* any iterate with ``t < 0`` is a strictly feasible point;
* a centred iterate with ``t - nu / tau > 0`` proves infeasibility.

If neither fires before ``tau_max`` the outcome is inconclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Cone:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float


@dataclass
class SocpResult:
    status: str  # "feasible" | "infeasible" | "inconclusive"
    x: np.ndarray
    t: float
    lower_bound: float
    newton_steps: int


class SocpFeasibility:
    """Feasibility problem over cones and ellipsoidal bounds.

    Parameters
    ----------
    cones : list of Cone
    quad : ndarray, shape (q, n)
        Nonnegative weights; row ``q`` encodes ``sum_j quad[q, j] x_j**2 < 1``.
        Must bound every variable so the phase-one problem is bounded.
    """

    def __init__(self, cones, quad):
        self.quad = np.asarray(quad, dtype=float)
        self.n = self.quad.shape[1]
        # Row-normalise every cone so one unit of t means the same everywhere.
        self.A, self.b, self.c, self.d = [], [], [], []
        for cone in cones:
            scale = max(np.linalg.norm(cone.c), np.abs(cone.d), 1e-300)
            self.A.append(np.asarray(cone.A, dtype=float) / scale)
            self.b.append(np.asarray(cone.b, dtype=float) / scale)
            self.c.append(np.asarray(cone.c, dtype=float) / scale)
            self.d.append(float(cone.d) / scale)
        self.nu = 2 * len(self.A) + self.quad.shape[0]

    # Cone residual without t: ||A x + b|| - c^T x - d.
    def gaps(self, x):
        return np.array([np.linalg.norm(A @ x + b) - c @ x - d
                         for A, b, c, d in zip(self.A, self.b, self.c, self.d)])

    def _barrier(self, z, tau, need_derivs=True):
        x, t = z[:-1], z[-1]
        n1 = self.n + 1
        val = tau * t
        grad = np.zeros(n1)
        grad[-1] = tau
        hess = np.zeros((n1, n1)) if need_derivs else None
        for A, b, c, d in zip(self.A, self.b, self.c, self.d):
            s = c @ x + d + t
            u = A @ x + b
            D = s * s - u @ u
            if s <= 0 or D <= 0:
                return np.inf, None, None
            val -= np.log(D)
            if need_derivs:
                ch = np.append(c, 1.0)
                Ah = np.hstack([A, np.zeros((A.shape[0], 1))])
                gD = 2 * s * ch - 2 * Ah.T @ u
                grad -= gD / D
                hess += -(2 * np.outer(ch, ch) - 2 * Ah.T @ Ah) / D + np.outer(gD, gD) / D**2
        for w in self.quad:
            D = 1.0 - w @ (x * x)
            if D <= 0:
                return np.inf, None, None
            val -= np.log(D)
            if need_derivs:
                gD = np.append(-2 * w * x, 0.0)
                grad -= gD / D
                hD = np.diag(np.append(-2 * w, 0.0))
                hess += -hD / D + np.outer(gD, gD) / D**2
        return val, grad, hess

    def solve(self, x0=None, tau0=1.0, mu=10.0, tau_max=1e10,
              newton_tol=1e-10, max_newton=200) -> SocpResult:
        if x0 is None:
            x0 = np.zeros(self.n)
        x0 = np.asarray(x0, dtype=float)
        if np.any(self.quad @ (x0 * x0) >= 1):
            raise ValueError("x0 must satisfy the ellipsoidal bounds strictly")
        gaps = self.gaps(x0) if self.A else np.zeros(1)
        z = np.append(x0, max(gaps.max(), 0.0) + 1.0)
        if not self.A:
            return SocpResult("feasible", x0, -np.inf, -np.inf, 0)
        tau = tau0
        steps = 0
        while True:
            for _ in range(max_newton):
                if z[-1] < 0:
                    return SocpResult("feasible", z[:-1].copy(), z[-1], -np.inf, steps)
                f, g, H = self._barrier(z, tau)
                try:
                    dz = -np.linalg.solve(H, g)
                except np.linalg.LinAlgError:
                    dz = -np.linalg.lstsq(H, g, rcond=None)[0]
                dec = -g @ dz
                if not np.isfinite(dec) or dec / 2 <= newton_tol:
                    break
                step = 1.0
                while step > 1e-14:
                    fn, _, _ = self._barrier(z + step * dz, tau, need_derivs=False)
                    if fn <= f - 0.25 * step * dec:
                        break
                    step *= 0.5
                else:
                    break
                z = z + step * dz
                steps += 1
            if z[-1] < 0:
                return SocpResult("feasible", z[:-1].copy(), z[-1], -np.inf, steps)
            bound = z[-1] - self.nu / tau
            if bound > 0:
                return SocpResult("infeasible", z[:-1].copy(), z[-1], bound, steps)
            if tau >= tau_max:
                return SocpResult("inconclusive", z[:-1].copy(), z[-1], bound, steps)
            tau *= mu
