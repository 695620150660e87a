"""Regularized solutions of adjoint moment equations and log-scale deconvolution.

Solving S* g = r for a regularly identified functional turns quadrature truth
into a sample moment: the functional equals the population mean of g at the
observations (plus the functional's additive calibration when its representer
is only defined up to a constant).  Truncated SVD and Tikhonov routes are
provided; for irregular functionals the solution norm diverges as the
truncation index grows, and the solution carries a flag saying so.

The deconvolution solver inverts r(c*) = integral f_eps(c / c*) w(c) dc on a
log grid: substituting c = exp(z), c* = exp(tau) turns the equation into a
convolution x = K * y with x(tau) = exp(-tau) r(exp(tau)),
K(u) = exp(u) f_eps(exp(u)) and y(z) = w(exp(z)), solved by FFT division with
spectral clipping where the kernel transform is negligible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import (
    SingularSystem,
    Functional,
    TAU_IDENT,
    singular_system,
    source_norm_profile,
)
from .linop import GridFunction, LinOp, WeightedSpace, adjoint

__all__ = [
    "UnidentifiedFunctionalError",
    "GridCoverageError",
    "KernelSymmetryError",
    "RegPolicy",
    "MomentSolution",
    "solve_adjoint_equation",
    "MomentEstimate",
    "moment_estimate",
    "DeconvolutionResult",
    "deconvolve_multiplicative",
]


class UnidentifiedFunctionalError(ValueError):
    """The representer has mass in the numerical null space."""


class GridCoverageError(ValueError):
    """Too many sample points fall outside the observation grid."""


class KernelSymmetryError(ValueError):
    """The log-scale error kernel is not symmetric."""


@dataclass(frozen=True)
class RegPolicy:
    """Regularization policy for the adjoint equation.

    method: "tsvd" (truncation index) or "tikhonov" (ridge).
    selection: "fixed" uses ``parameter`` as given; "discrepancy" picks the
    weakest regularization whose relative residual is below ``target``.
    """

    method: str = "tsvd"
    parameter: float = 0
    selection: str = "discrepancy"
    target: float = 1e-3

    def __post_init__(self):
        if self.method not in ("tsvd", "tikhonov"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.selection not in ("fixed", "discrepancy"):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass(frozen=True)
class MomentSolution:
    """Solution g of S* g ~ r with its residual bookkeeping.

    residual is ||S* g - r|| / ||r|| evaluated by applying the adjoint
    matrix directly.  ``flags`` contains "irregular: norm-divergent" when
    the beta = 1 source series of r fails its plateau test (the solution
    norm then grows without bound as the truncation index increases).
    """

    g: GridFunction
    residual: float
    g_norm: float
    policy: RegPolicy
    parameter_used: float
    flags: tuple = ()


def solve_adjoint_equation(
    op: LinOp,
    r: Functional,
    policy: RegPolicy = RegPolicy(),
    sys: Optional[SingularSystem] = None,
    tau_ident: float = TAU_IDENT,
) -> MomentSolution:
    """Solve S* g = r by truncated SVD or Tikhonov regularization.

    The equation is solved against the raw representer values on the full
    domain (constants are in the range of the adjoint of a conditional-mean
    operator, so no additive calibration is needed downstream).  Functionals
    with null-space mass above tau_ident * ||r|| are rejected.
    """
    if sys is None:
        sys = singular_system(op)
    rvals = r.representer.values
    rnorm = math.sqrt(float(np.sum(op.domain.weights * rvals**2)))
    if rnorm == 0.0:
        raise ValueError("zero representer")
    coeffs = sys.coefficients(rvals)[sys.resolved]
    lam = sys.values[sys.resolved]
    null_sq = max(rnorm**2 - float(np.sum(coeffs**2)), 0.0)
    if math.sqrt(null_sq) > tau_ident * rnorm:
        raise UnidentifiedFunctionalError("representer has null-space mass")

    flags = []
    diverging = not source_norm_profile(
        Functional(r.name, r.representer, r.defined_up_to_constant), sys
    ).plateau(1.0)
    if diverging:
        flags.append("irregular: norm-divergent")

    if policy.method == "tsvd":
        g_vals, used = _solve_tsvd(sys, coeffs, lam, rnorm, policy, flags)
    else:
        g_vals, used = _solve_tikhonov(op, sys, rvals, rnorm, policy, flags)

    g = GridFunction(op.codomain, g_vals)
    resid_vec = adjoint(op).apply(g).values - rvals
    residual = (
        math.sqrt(float(np.sum(op.domain.weights * resid_vec**2))) / rnorm
    )
    g_norm = float(np.sqrt(np.sum(op.codomain.weights * g_vals**2)))
    return MomentSolution(
        g=g,
        residual=residual,
        g_norm=g_norm,
        policy=policy,
        parameter_used=used,
        flags=tuple(flags),
    )


def _solve_tsvd(sys, coeffs, lam, rnorm, policy, flags):
    rank = len(lam)
    if policy.selection == "fixed":
        j_use = int(policy.parameter)
        if j_use < 1 or j_use > rank:
            raise ValueError(f"truncation index must be in [1, {rank}]")
    else:
        # Discrepancy: smallest J with residual below target (residual in
        # singular coordinates: tail coefficient mass plus null mass).
        tail = rnorm**2 - np.cumsum(coeffs**2)
        rel = np.sqrt(np.maximum(tail, 0.0)) / rnorm
        hits = np.nonzero(rel <= policy.target)[0]
        if len(hits):
            j_use = int(hits[0]) + 1
        else:
            j_use = rank
            flags.append("discrepancy target unreached")
    q = coeffs[:j_use] / lam[:j_use]
    g_vals = q @ sys.left[:j_use]
    return g_vals, float(j_use)


def _solve_tikhonov(op, sys, rvals, rnorm, policy, flags):
    a_tilde = op.symmetrized()
    r_tilde = np.sqrt(op.domain.weights) * rvals
    rhs = a_tilde @ r_tilde
    gram = a_tilde @ a_tilde.T
    lam_max_sq = sys.values[0] ** 2 if sys.k else 1.0

    def solve(tau):
        g_tilde = np.linalg.solve(gram + tau * np.eye(gram.shape[0]), rhs)
        return g_tilde / np.sqrt(op.codomain.weights)

    def rel_residual(g_vals):
        resid = adjoint(op).apply_values(g_vals) - rvals
        return math.sqrt(float(np.sum(op.domain.weights * resid**2))) / rnorm

    if policy.selection == "fixed":
        tau = float(policy.parameter)
        if tau <= 0:
            raise ValueError("ridge must be positive")
        return solve(tau), tau
    tau = float(lam_max_sq)
    g_vals = solve(tau)
    while rel_residual(g_vals) > policy.target and tau > 1e-16 * lam_max_sq:
        tau /= 2.0
        g_vals = solve(tau)
    if rel_residual(g_vals) > policy.target:
        flags.append("discrepancy target unreached")
    return g_vals, tau


# ---------------------------------------------------------------------------
# Plug-in moment estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    se: float
    n: int
    n_outside: int


def moment_estimate(
    g: GridFunction,
    samples: np.ndarray,
    calibration: float = 0.0,
    max_outside_frac: float = 0.01,
) -> MomentEstimate:
    """Sample mean of g at the observations, multilinearly interpolated.

    Points outside the grid's bounding box are counted; more than
    ``max_outside_frac`` of them is an error, otherwise they are clamped to
    the hull (no extrapolation).  The estimate is exactly linear in g.
    """
    space = g.space
    samples = np.asarray(samples, dtype=float)
    if space.dim == 1:
        pts = samples.reshape(-1, 1)
    else:
        if samples.ndim != 2 or samples.shape[1] != space.dim:
            raise ValueError("sample dimension does not match the grid")
        pts = samples
    n = len(pts)
    if n == 0:
        raise ValueError("no samples")
    if space.axes is None:
        if space.dim != 1:
            raise ValueError("observation space lacks tensor axes")
        axes = (space.nodes,)
    else:
        axes = space.axes
    lo = np.array([ax[0] for ax in axes])
    hi = np.array([ax[-1] for ax in axes])
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    n_outside = int(np.sum(outside))
    if n_outside > max_outside_frac * n:
        raise GridCoverageError("grid does not cover data")
    pts = np.clip(pts, lo, hi)

    shape = tuple(len(ax) for ax in axes)
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(axes, g.values.reshape(shape), method="linear")
    vals = interp(pts)
    value = float(np.mean(vals)) + calibration
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return MomentEstimate(value=value, se=se, n=n, n_outside=n_outside)


# ---------------------------------------------------------------------------
# Multiplicative-error deconvolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeconvolutionResult:
    """Solution w of r(c*) = integral f_eps(c/c*) w(c) dc on a log grid.

    ``w`` lives on the geometric grid c = exp(tau); ``interior`` masks the
    nodes inside the unpadded support where the solution is trustworthy.
    ``clipped_energy`` is the fraction of the transformed signal's energy at
    frequencies where the kernel transform was clipped to zero; above 10%
    the result carries the "severely ill-posed" flag.
    """

    w: GridFunction
    tau: np.ndarray
    delta: float
    interior: np.ndarray
    clipped_energy: float
    flags: tuple
    kernel_hat: np.ndarray = field(repr=False)

    def forward(self, y_values: np.ndarray) -> np.ndarray:
        """Convolve values on the tau grid with the error kernel.

        Returns the reconstruction of x(tau) = exp(-tau) r(exp(tau)); used
        for round-trip verification of the inversion.
        """
        return np.real(np.fft.ifft(np.fft.fft(y_values) * self.kernel_hat))


def deconvolve_multiplicative(
    r_chi: Callable[[np.ndarray], np.ndarray],
    error_density: Callable[[np.ndarray], np.ndarray],
    fft_size: int = 4096,
    support: tuple = (0.05, 20.0),
    pad_sigmas: float = 4.0,
    eps_k: float = 1e-8,
    symmetry_tol: float = 1e-6,
) -> DeconvolutionResult:
    """FFT inversion of the multiplicative-error integral equation.

    ``support`` = (c_lo, c_hi) brackets the consumption values of interest
    (e.g. extreme quantiles of the consumption law); the log grid extends
    ``pad_sigmas`` kernel standard deviations beyond it and the signal is
    cosine-tapered to zero across the padding to control circular leakage.
    The transformed kernel K(u) = exp(u) f_eps(exp(u)) must be symmetric in
    u (checked).  Frequencies with |K_hat| below eps_k times its maximum are
    zeroed and the clipped energy fraction is reported.
    """
    if fft_size < 256 or fft_size & (fft_size - 1):
        raise ValueError("fft_size must be a power of two >= 256")
    c_lo, c_hi = support
    if not (0 < c_lo < c_hi):
        raise ValueError("support must satisfy 0 < c_lo < c_hi")

    def kernel(u):
        u = np.asarray(u, dtype=float)
        return np.exp(u) * error_density(np.exp(u))

    # Kernel spread, for padding: K is a probability density in u.
    probe = np.linspace(-30.0, 30.0, 20001)
    kp = kernel(probe)
    mass = np.trapezoid(kp, probe)
    mu_k = np.trapezoid(probe * kp, probe) / mass
    sigma_k = math.sqrt(
        max(np.trapezoid((probe - mu_k) ** 2 * kp, probe) / mass, 1e-12)
    )

    pad = max(pad_sigmas * sigma_k, 0.25)
    tau_lo = math.log(c_lo) - pad
    tau_hi = math.log(c_hi) + pad
    n = fft_size
    delta = (tau_hi - tau_lo) / n
    tau = tau_lo + delta * np.arange(n)

    # Kernel on the circular lattice centered at u = 0.
    u_lattice = delta * np.fft.fftfreq(n, d=1.0 / n)
    k_samp = kernel(u_lattice)
    k_dense = kernel(np.sort(u_lattice))
    asym = np.max(np.abs(k_dense - k_dense[::-1])) / max(np.max(np.abs(k_dense)), 1e-300)
    if asym > symmetry_tol:
        raise KernelSymmetryError("kernel symmetry violated")

    x = np.exp(-tau) * np.asarray(r_chi(np.exp(tau)), dtype=float)
    interior = (tau >= math.log(c_lo)) & (tau <= math.log(c_hi))
    x = x * _cosine_taper(tau, math.log(c_lo), math.log(c_hi), pad)

    x_hat = np.fft.fft(x)
    k_hat = delta * np.fft.fft(k_samp)
    keep = np.abs(k_hat) >= eps_k * np.max(np.abs(k_hat))
    total_energy = float(np.sum(np.abs(x_hat) ** 2))
    clipped_energy = (
        float(np.sum(np.abs(x_hat[~keep]) ** 2)) / total_energy
        if total_energy > 0
        else 0.0
    )
    ratio = np.zeros_like(x_hat)
    ratio[keep] = x_hat[keep] / k_hat[keep]
    y = np.real(np.fft.ifft(ratio))

    flags = []
    if clipped_energy > 0.10:
        flags.append("severely ill-posed")

    c_nodes = np.exp(tau)
    weights = np.gradient(c_nodes)
    space = WeightedSpace(c_nodes, weights, label="log-grid", axes=(c_nodes,))
    return DeconvolutionResult(
        w=GridFunction(space, y),
        tau=tau,
        delta=delta,
        interior=interior,
        clipped_energy=clipped_energy,
        flags=tuple(flags),
        kernel_hat=k_hat,
    )


def _cosine_taper(tau, lo, hi, pad):
    """1 inside [lo, hi], cosine decay to 0 across the padding."""
    w = np.ones_like(tau)
    left = tau < lo
    w[left] = 0.5 * (1 + np.cos(np.pi * np.minimum((lo - tau[left]) / pad, 1.0)))
    right = tau > hi
    w[right] = 0.5 * (1 + np.cos(np.pi * np.minimum((tau[right] - hi) / pad, 1.0)))
    return w
