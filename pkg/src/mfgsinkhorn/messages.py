"""Potential stacks, forward/backward messages, marginals, and plan entropy.

Each population carries a path measure over grid positions at times
``k = 0..K``:

    pi(x_0, ..., x_K) = prod_k exp(u_k(x_k)) * R(x_0, ..., x_K),

where the reference ``R`` draws ``x_0`` uniformly over the M cells and then
runs the one-step diffusion kernel K times.  Storage never touches the K+1
dimensional tensor: time-k marginals come from the standard forward/backward
recursions

    alpha_0 = 1,  alpha_{k+1} = Kernel(exp(u_k) . alpha_k)
    beta_K  = 1,  beta_{k-1}  = Kernel(exp(u_k) . beta_k)
    rho_k   = exp(u_k) . alpha_k . beta_k / M

(the 1/M is the uniform initial weight of the reference, folded in exactly
once, at marginal evaluation).  Everything is O(K * M) per population.

Messages run either in linear space or in log space.  Log space subtracts a
running maximum before exponentiating, which keeps one-step transport of very
peaked factors finite when the step variance is small.

The relative entropy of the path measure against the reference collapses to
``sum_k <u_k, rho_k>`` because ``log(d pi / d R)`` is exactly the sum of the
potentials along the path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridSpec, MassField, SeparableKernel, apply_kernel_array

LINEAR, LOG = "linear", "log"
_MODES = (LINEAR, LOG)


class OverflowInLinearMode(FloatingPointError):
    """Linear-space message transport produced inf; rerun with log mode."""


@dataclass
class PotentialStack:
    """Per-population, per-time potentials ``u[i][k]``, flat over cells."""

    u: np.ndarray  # shape (N, K+1, M)
    grid: GridSpec

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 3 or self.u.shape[2] != self.grid.size:
            raise ValueError(
                f"potential stack must have shape (N, K+1, {self.grid.size})"
            )
        if np.isnan(self.u).any() or np.isposinf(self.u).any():
            raise ValueError("potentials must be < +inf and not NaN")

    @property
    def n_populations(self) -> int:
        return self.u.shape[0]

    @property
    def n_steps(self) -> int:
        return self.u.shape[1] - 1


class MarginalSet:
    """Time-k marginals of every population's path measure.

    ``raw(i, k)`` is the marginal of the (possibly unnormalized) path measure;
    ``normalized(i, k)`` rescales it to unit mass.  After the initial-potential
    update the two coincide.
    """

    def __init__(self, rho: np.ndarray, grid: GridSpec):
        rho = np.asarray(rho, dtype=float)
        if rho.ndim != 3 or rho.shape[2] != grid.size:
            raise ValueError(f"marginal array must have shape (N, K+1, {grid.size})")
        self.rho = rho
        self.grid = grid

    @property
    def n_populations(self) -> int:
        return self.rho.shape[0]

    @property
    def n_steps(self) -> int:
        return self.rho.shape[1] - 1

    def raw(self, i: int, k: int) -> np.ndarray:
        return self.rho[i, k]

    def total_mass(self, i: int, k: int = 0) -> float:
        return float(self.rho[i, k].sum())

    def normalized(self, i: int, k: int) -> MassField:
        vals = self.rho[i, k]
        return MassField(vals / vals.sum(), self.grid)


def _transport(kernel: SeparableKernel, expo: np.ndarray, mode: str) -> np.ndarray:
    """One message hop: linear takes/returns values, log takes/returns logs."""
    if mode == LINEAR:
        out = apply_kernel_array(kernel, expo)
        if np.isinf(out).any():
            raise OverflowInLinearMode(
                "message transport overflowed in linear mode; use log mode"
            )
        return out
    shift = expo.max()
    if shift == -np.inf:
        return np.full_like(expo, -np.inf)
    lifted = apply_kernel_array(kernel, np.exp(expo - shift))
    with np.errstate(divide="ignore"):
        return shift + np.log(lifted)


def forward_messages(u_i: np.ndarray, kernel: SeparableKernel, mode: str = LINEAR) -> np.ndarray:
    """alpha messages for one population; row k is alpha_k (or its log)."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}; got {mode!r}")
    K = u_i.shape[0] - 1
    alpha = np.empty_like(u_i)
    alpha[0] = 0.0 if mode == LOG else 1.0
    for k in range(K):
        expo = u_i[k] + alpha[k] if mode == LOG else np.exp(u_i[k]) * alpha[k]
        alpha[k + 1] = _transport(kernel, expo, mode)
    return alpha


def backward_messages(u_i: np.ndarray, kernel: SeparableKernel, mode: str = LINEAR) -> np.ndarray:
    """beta messages for one population; row k is beta_k (or its log)."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}; got {mode!r}")
    K = u_i.shape[0] - 1
    beta = np.empty_like(u_i)
    beta[K] = 0.0 if mode == LOG else 1.0
    for k in range(K, 0, -1):
        expo = u_i[k] + beta[k] if mode == LOG else np.exp(u_i[k]) * beta[k]
        beta[k - 1] = _transport(kernel, expo, mode)
    return beta


def marginal_masses(
    u_i: np.ndarray, alpha: np.ndarray, beta: np.ndarray, mode: str
) -> np.ndarray:
    """All time-k marginals, shape (K+1, M); rows sum to the plan mass."""
    M = u_i.shape[1]
    if mode == LOG:
        with np.errstate(invalid="ignore"):
            expo = u_i + alpha + beta
        expo = np.where(np.isnan(expo), -np.inf, expo)  # -inf + inf never occurs; guard anyway
        return np.exp(expo - np.log(M))
    return np.exp(u_i) * alpha * beta / M


def plan_mass(u_i, alpha, beta, mode: str, k: int = 0) -> float:
    """Total mass of the path measure, evaluated through time slice ``k``."""
    return float(marginal_masses(u_i, alpha, beta, mode)[k].sum())


class MessageCache:
    """Holds alpha/beta messages per population; refreshed wholesale.

    ``refresh_backward`` and ``refresh_forward`` recompute one population's
    messages from the current potentials.  There is no incremental path: a
    refresh after any potential change is always a from-scratch recursion, so
    cached and freshly computed messages are identical by construction.
    """

    def __init__(self, n_populations: int, n_steps: int, grid: GridSpec,
                 kernel: SeparableKernel, mode: str = LINEAR):
        if mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}; got {mode!r}")
        shape = (n_populations, n_steps + 1, grid.size)
        neutral = 0.0 if mode == LOG else 1.0
        self.alpha = np.full(shape, neutral)
        self.beta = np.full(shape, neutral)
        self.kernel = kernel
        self.mode = mode

    def refresh_backward(self, i: int, potentials: np.ndarray) -> None:
        self.beta[i] = backward_messages(potentials[i], self.kernel, self.mode)

    def refresh_forward(self, i: int, potentials: np.ndarray) -> None:
        self.alpha[i] = forward_messages(potentials[i], self.kernel, self.mode)

    def marginals(self, i: int, potentials: np.ndarray) -> np.ndarray:
        return marginal_masses(potentials[i], self.alpha[i], self.beta[i], self.mode)

    def beta_initial(self, i: int) -> np.ndarray:
        """beta_0 in linear values regardless of mode (may underflow to 0)."""
        if self.mode == LOG:
            return np.exp(self.beta[i, 0])
        return self.beta[i, 0]

    def log_beta_initial(self, i: int) -> np.ndarray:
        if self.mode == LOG:
            return self.beta[i, 0]
        with np.errstate(divide="ignore"):
            return np.log(self.beta[i, 0])


def plan_entropy(i: int, potentials: PotentialStack, marginals: MarginalSet,
                 mass_tol: float = 1e-9) -> float:
    """Relative entropy of population ``i``'s path measure vs the reference.

    Uses the closed form ``sum_k <u_k, rho_k>`` with the convention that cells
    of zero marginal mass contribute nothing.  The plan must be normalized.
    """
    total = marginals.total_mass(i, 0)
    if abs(total - 1.0) > mass_tol:
        raise ValueError(
            f"plan of population {i} has mass {total!r}; normalize before "
            "evaluating its entropy"
        )
    u_i = potentials.u[i]
    rho_i = marginals.rho[i]
    mask = rho_i > 0
    return float(np.sum(u_i[mask] * rho_i[mask]))
