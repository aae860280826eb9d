"""Posterior potential for the TV-Gaussian model.

The target measure has density  exp(-psi(z))  with respect to the Gaussian
reference, where  psi = phi + reg:  phi is the Poisson likelihood potential
and  reg = tv_weight * TV(z)  acts on the latent field, before the intensity
map.  Everything here works on coefficient vectors; in those coordinates the
reference is standard normal and derivative vectors already carry the
covariance square root (see klbasis.pullback), so the acceptance functional
below uses plain Euclidean pairings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fields import tv_arrays
from .forward import RadonOperator, Reparam, Sinogram, _phi_of_theta
from .klbasis import KLBasis

__all__ = ["TGPosterior", "PosteriorEval"]


class PosteriorEval(NamedTuple):
    """Cached pieces of one potential evaluation, reused by the samplers."""

    psi: float
    phi: float
    reg: float
    z: np.ndarray       # latent field values, flat
    theta: np.ndarray   # expected counts


@dataclass(frozen=True)
class TGPosterior:
    """Bundle of forward operator, intensity map, basis, data and TV weight."""

    op: RadonOperator
    rep: Reparam
    basis: KLBasis
    data: Sinogram
    tv_weight: float = 0.0

    def __post_init__(self):
        if self.tv_weight < 0.0:
            raise ValueError(f"tv_weight must be nonnegative, got {self.tv_weight}")
        if self.op.grid != self.basis.grid:
            raise ValueError("operator and basis grids disagree")
        if self.data.n_rays != self.op.n_rays:
            raise ValueError("data length does not match the operator rays")
        object.__setattr__(self, "_counts", self.data.counts.astype(float))

    @property
    def n_modes(self) -> int:
        return self.basis.n_modes

    @property
    def grid(self):
        return self.basis.grid

    def evaluate(self, c) -> PosteriorEval:
        z = self.basis.synthesize_values(c)
        theta = self.op.apply(self.rep.apply(z))
        phi = _phi_of_theta(theta, self._counts)
        reg = 0.0
        if self.tv_weight > 0.0:
            reg = self.tv_weight * tv_arrays(z.reshape(self.grid.shape),
                                             self.grid.hx, self.grid.hy)
        return PosteriorEval(phi + reg, phi, reg, z, theta)

    def phi(self, c) -> float:
        return self.evaluate(c).phi

    def reg(self, c) -> float:
        """TV penalty tv_weight * TV(z) on the latent field."""
        if self.tv_weight == 0.0:
            return 0.0
        z = self.basis.synthesize_values(c).reshape(self.grid.shape)
        return self.tv_weight * tv_arrays(z, self.grid.hx, self.grid.hy)

    def psi(self, c) -> float:
        return self.evaluate(c).psi

    def phi_grad(self, c) -> np.ndarray:
        """Coefficient-space gradient of the likelihood potential."""
        return self.phi_grad_at(self.evaluate(c))

    def phi_grad_at(self, ev: PosteriorEval) -> np.ndarray:
        dv = self.rep.deriv(ev.z) * self.op.adjoint(1.0 - self._counts / ev.theta)
        return self.basis.pullback(dv)

    def psi_grad(self, c) -> np.ndarray:
        """Gradient of psi; only defined for the smooth case tv_weight = 0."""
        if self.tv_weight != 0.0:
            raise ValueError("psi is not differentiable for tv_weight > 0; "
                             "use the splitting solver's offset direction instead")
        return self.phi_grad(c)

    def rho(self, z, v, g, delta: float) -> float:
        """Acceptance functional of the gradient-informed proposal family.

        rho(z, v) = psi(z) + <v - z, g>/2 + (delta/4) <z + v, g>
                    + (delta/4) ||g||^2,
        with g a coefficient-space derivative vector evaluated at z.  The
        proposal kernel is reversible when the same g enters forward and
        reverse evaluations; pairings are Euclidean because derivative
        vectors already absorb the covariance square root.
        """
        if not 0.0 <= delta <= 2.0:
            raise ValueError(f"delta must lie in [0, 2], got {delta}")
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        g = np.asarray(g, dtype=float)
        if not (z.shape == v.shape == g.shape):
            raise ValueError("state, proposal and direction shapes disagree")
        return (self.psi(z)
                + 0.5 * float(np.dot(v - z, g))
                + 0.25 * delta * float(np.dot(z + v, g))
                + 0.25 * delta * float(np.dot(g, g)))

    def rho_from_eval(self, ev_z: PosteriorEval, z, v, g, delta: float) -> float:
        """rho with psi(z) taken from a cached evaluation (hot path)."""
        return (ev_z.psi
                + 0.5 * float(np.dot(v - z, g))
                + 0.25 * delta * float(np.dot(z + v, g))
                + 0.25 * delta * float(np.dot(g, g)))
