"""Model functions: double-well potential, response functions, sources.

Everything here is a pure function of value arrays (typically Gauss-point
samples), vectorised over the leading axes.  Derivatives are hand-coded and
unit-checked against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import ElasticityTensor, tensor_dot, tensor_norm2


class ModelConfigError(ValueError):
    """Raised when model constants violate their admissibility rules."""


# ---------------------------------------------------------------------------
# double-well potential, convex/concave split
# ---------------------------------------------------------------------------

def psi_value(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * 0.25 * (r * r - 1.0) ** 2


def psi_prime(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * (r * r - 1.0) * r


def psi_second(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * (3.0 * r * r - 1.0)


def psi_third(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * 6.0 * r


# convex part 1/4 (r^4 + 1), concave part -r^2/2
def psi1_prime(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * r ** 3


def psi1_second(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return well_scale * 3.0 * r * r


def psi2_prime(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return -well_scale * r


def psi2_second(r, well_scale: float = 1.0):
    r = np.asarray(r, dtype=float)
    return np.full_like(r, -well_scale)


# ---------------------------------------------------------------------------
# smoothed ramps for f, h, k (C^2 quintic smoothstep of (r+1)/2)
# ---------------------------------------------------------------------------

def smoothstep(r):
    """Quintic smoothstep of (r+1)/2: 0 at r<=-1, 1 at r>=1, C^2 throughout."""
    t = np.clip((np.asarray(r, dtype=float) + 1.0) * 0.5, 0.0, 1.0)
    return t ** 3 * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_prime(r):
    t = np.clip((np.asarray(r, dtype=float) + 1.0) * 0.5, 0.0, 1.0)
    return 0.5 * 30.0 * t ** 2 * (1.0 - t) ** 2


def smoothstep_second(r):
    t = np.clip((np.asarray(r, dtype=float) + 1.0) * 0.5, 0.0, 1.0)
    return 0.25 * 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


# ---------------------------------------------------------------------------
# stress response g
# ---------------------------------------------------------------------------

def g_stress(stress_v: np.ndarray) -> np.ndarray:
    """g(A) = 1 / sqrt(1 + |A|^2) on Voigt tensors (leading axes free)."""
    return 1.0 / np.sqrt(1.0 + tensor_norm2(np.asarray(stress_v, dtype=float)))


def g_stress_grad(stress_v: np.ndarray) -> np.ndarray:
    """Tensor derivative of g, returned in Voigt form (same shape as input)."""
    a = np.asarray(stress_v, dtype=float)
    scale = (1.0 + tensor_norm2(a)) ** (-1.5)
    return -a * scale[..., None]


def g_stress_hess(stress: np.ndarray) -> np.ndarray:
    """Hessian of g at a single 2x2 tensor, as a full (2,2,2,2) array."""
    a = np.asarray(stress, dtype=float)
    n2 = float((a * a).sum())
    s3 = (1.0 + n2) ** (-1.5)
    s5 = (1.0 + n2) ** (-2.5)
    eye = np.eye(2)
    return (3.0 * s5 * np.einsum("ij,kl->ijkl", a, a)
            - s3 * np.einsum("ik,jl->ijkl", eye, eye))


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------

@dataclass
class DrugSchedule:
    """Exponentially decaying bolus train used for reference dosages."""
    dosage: float = 0.5
    times: tuple[float, ...] = (0.0, 0.35, 0.7)
    lifetime: float = 0.2

    def __post_init__(self):
        if self.dosage < 0:
            raise ModelConfigError("drug dosage must be non-negative")
        if self.lifetime <= 0:
            raise ModelConfigError("drug mean lifetime must be positive")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ModelConfigError("drug delivery times must be strictly increasing")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for ti in self.times:
            # dose takes effect at the infusion instant itself
            active = t >= ti
            out = out + np.where(active, self.dosage * np.exp(-(t - ti) / self.lifetime), 0.0)
        return out


@dataclass
class ModelParams:
    """Physical constants of the coupled model.

    ``nutrient_cap`` is max(sigma_c, sup |boundary supply|); the boundary
    supply bound is taken from the control box when the problem is set up.
    """
    beta: float = 1.0
    B: float = 0.5
    kappa: float = 1.0
    chi: float = 0.05
    lambda_p: float = 0.5
    lambda_a: float = 0.1
    lambda_c: float = 1.0
    sigma_c: float = 1.0
    C: ElasticityTensor = field(default_factory=lambda: ElasticityTensor.isotropic(1.0, 1.0))
    bar_strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    misfit_strain: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.0]))
    g_load: np.ndarray = field(default_factory=lambda: np.zeros(2))
    supply_bound: float = 1.0      # sup of |w1| over its admissible box

    def __post_init__(self):
        for name in ("beta", "B", "kappa", "chi", "lambda_p", "lambda_a",
                     "lambda_c", "sigma_c"):
            if getattr(self, name) < 0:
                raise ModelConfigError(f"rate constant {name} must be non-negative (A1)")
        if self.beta == 0 and self.B == 0 and self.kappa == 0:
            raise ModelConfigError(
                "beta = 0 requires B > 0 or kappa > 0 (A1), otherwise the "
                "nutrient equation is singular")
        self.bar_strain = np.asarray(self.bar_strain, dtype=float)
        self.misfit_strain = np.asarray(self.misfit_strain, dtype=float)
        self.g_load = np.asarray(self.g_load, dtype=float)
        if self.bar_strain.shape != (3,) or self.misfit_strain.shape != (3,):
            raise ModelConfigError("strain tensors must be Voigt triples (xx, yy, xy)")

    @property
    def nutrient_cap(self) -> float:
        return max(self.sigma_c, self.supply_bound)


@dataclass
class Nonlinearities:
    """Selector bundle for the potential, ramps, stress response and weight n."""
    psi: str = "quartic"
    well_scale: float = 1.0
    fhk: str = "smoothstep"
    g: str = "inverse_sqrt"
    weight_n: str = "ramp"
    region: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    ramp_blend: float = 0.05       # blend half-width in ramp units ((1-phi)/2)

    def __post_init__(self):
        if self.psi != "quartic":
            raise ModelConfigError(f"unknown potential selector {self.psi!r}")
        if self.well_scale <= 0:
            raise ModelConfigError("well_scale must be positive")
        if self.fhk != "smoothstep":
            raise ModelConfigError(f"unknown ramp selector {self.fhk!r}")
        if self.g not in ("inverse_sqrt", "constant"):
            raise ModelConfigError(f"unknown stress-response selector {self.g!r}")
        if self.weight_n not in ("ramp", "indicator", "constant"):
            raise ModelConfigError(f"unknown weight selector {self.weight_n!r}")
        if not 0 < self.ramp_blend < 0.5:
            raise ModelConfigError("ramp_blend must lie in (0, 1/2)")

    # potential -------------------------------------------------------------
    def psi_value(self, r):
        return psi_value(r, self.well_scale)

    def psi_prime(self, r):
        return psi_prime(r, self.well_scale)

    def psi_second(self, r):
        return psi_second(r, self.well_scale)

    def psi_third(self, r):
        return psi_third(r, self.well_scale)

    def psi1_prime(self, r):
        return psi1_prime(r, self.well_scale)

    def psi1_second(self, r):
        return psi1_second(r, self.well_scale)

    def psi2_prime(self, r):
        return psi2_prime(r, self.well_scale)

    def psi2_second(self, r):
        return psi2_second(r, self.well_scale)

    # ramps -----------------------------------------------------------------
    f = staticmethod(smoothstep)
    f_prime = staticmethod(smoothstep_prime)
    f_second = staticmethod(smoothstep_second)
    h = staticmethod(smoothstep)
    h_prime = staticmethod(smoothstep_prime)
    k = staticmethod(smoothstep)
    k_prime = staticmethod(smoothstep_prime)

    # stress response ---------------------------------------------------------
    def g_of(self, stress_v):
        if self.g == "constant":
            return np.ones(np.asarray(stress_v).shape[:-1])
        return g_stress(stress_v)

    def g_grad(self, stress_v):
        if self.g == "constant":
            return np.zeros_like(np.asarray(stress_v, dtype=float))
        return g_stress_grad(stress_v)

    # stress weight n(x, phi) -------------------------------------------------
    def n_of(self, xy: np.ndarray, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.weight_n == "constant":
            return np.ones_like(phi)
        if self.weight_n == "indicator":
            x0, x1, y0, y1 = self.region
            inside = ((xy[..., 0] >= x0) & (xy[..., 0] <= x1)
                      & (xy[..., 1] >= y0) & (xy[..., 1] <= y1))
            return inside.astype(float) * np.ones_like(phi)
        return _ramp(0.5 * (1.0 - phi), self.ramp_blend)

    def n_prime(self, xy: np.ndarray, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.weight_n != "ramp":
            return np.zeros_like(phi)
        return -0.5 * _ramp_prime(0.5 * (1.0 - phi), self.ramp_blend)


def _ramp(t, delta):
    """C^1 unit ramp: 0 below 0, 1 above 1, slope 1/(1-delta) in between.

    Quadratic blends of half-width ``delta`` at both ends keep the endpoint
    values exact while removing the clip kinks.
    """
    t = np.asarray(t, dtype=float)
    m = 1.0 / (1.0 - delta)
    out = np.empty_like(t)
    lo = t <= 0.0
    hi = t >= 1.0
    b0 = (~lo) & (t < delta)
    b1 = (~hi) & (t > 1.0 - delta)
    mid = ~(lo | hi | b0 | b1)
    out[lo] = 0.0
    out[hi] = 1.0
    out[b0] = m * t[b0] ** 2 / (2.0 * delta)
    out[mid] = m * (t[mid] - delta / 2.0)
    out[b1] = 1.0 - m * (1.0 - t[b1]) ** 2 / (2.0 * delta)
    return out


def _ramp_prime(t, delta):
    t = np.asarray(t, dtype=float)
    m = 1.0 / (1.0 - delta)
    out = np.zeros_like(t)
    b0 = (t > 0.0) & (t < delta)
    b1 = (t > 1.0 - delta) & (t < 1.0)
    mid = (t >= delta) & (t <= 1.0 - delta)
    out[b0] = m * t[b0] / delta
    out[mid] = m
    out[b1] = m * (1.0 - t[b1]) / delta
    return out


# ---------------------------------------------------------------------------
# elastic energy density and sources
# ---------------------------------------------------------------------------

def elastic_strain(params: ModelParams, phi, strain_v) -> np.ndarray:
    """Elastic part of the strain, E - Ebar - phi E*."""
    phi = np.asarray(phi, dtype=float)
    return strain_v - params.bar_strain - phi[..., None] * params.misfit_strain


def stress(params: ModelParams, phi, strain_v) -> np.ndarray:
    """W_E = C(E - Ebar - phi E*), Voigt form."""
    return params.C.apply(elastic_strain(params, phi, strain_v))


def elastic_energy_density(params: ModelParams, phi, strain_v) -> np.ndarray:
    e = elastic_strain(params, phi, strain_v)
    return 0.5 * tensor_dot(params.C.apply(e), e)


def w_phi(params: ModelParams, phi, strain_v) -> np.ndarray:
    """W_phi = -C(E - Ebar - phi E*) : E*, the composition derivative of W."""
    return -tensor_dot(stress(params, phi, strain_v), params.misfit_strain)


def source_U(params: ModelParams, nl: Nonlinearities, phi, sigma, strain_v,
             m_t) -> np.ndarray:
    """Cell growth rate lambda_p sigma f(phi) g(W_E) - (lambda_a + m) k(phi)."""
    gw = nl.g_of(stress(params, phi, strain_v))
    return (params.lambda_p * np.asarray(sigma) * nl.f(phi) * gw
            - (params.lambda_a + m_t) * nl.k(phi))


def source_S(params: ModelParams, nl: Nonlinearities, phi, sigma, s_t) -> np.ndarray:
    """Nutrient rate -h(phi)(lambda_c sigma - s) + B(sigma_c - sigma)."""
    sigma = np.asarray(sigma, dtype=float)
    return (-nl.h(phi) * (params.lambda_c * sigma - s_t)
            + params.B * (params.sigma_c - sigma))


def source_S_partials(params: ModelParams, nl: Nonlinearities, phi, sigma, s_t):
    """(dS/dphi, dS/dsigma) at the given state."""
    sigma = np.asarray(sigma, dtype=float)
    d_phi = -nl.h_prime(phi) * (params.lambda_c * sigma - s_t)
    d_sigma = -nl.h(phi) * params.lambda_c - params.B * np.ones_like(sigma)
    return d_phi, d_sigma
