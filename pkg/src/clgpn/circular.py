"""Angles, the projected normal distribution and the joint circular-linear density.

The circular variable ``x`` is the direction of a latent bivariate normal vector
``z ~ N2(mu, Sigma)``; the linear variable ``y`` is a regression on the Cartesian
coordinates of ``z``::

    y = gamma0 + gamma1 * r cos(x) + gamma2 * r sin(x) + eps,   eps ~ N(0, sigma_y_sq)

with ``r = |z|``. The second latent variance is fixed at 1 for identifiability.
All densities are returned on the log scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DomainError

TWO_PI = 2.0 * np.pi
LOG_2PI = np.log(TWO_PI)

PARAM_NAMES = (
    "mu1",
    "mu2",
    "sigma1_sq",
    "rho",
    "gamma0",
    "gamma1",
    "gamma2",
    "sigma_y_sq",
)

# Below this standardized radius mean the tilt factor is evaluated with a
# continued fraction; above it erfcx is accurate to a few ulps.
_TAIL_CUTOFF = -8.0
_CF_TERMS = 60


class Variant(str, enum.Enum):
    """Model variant: general, diagonal-covariance, or circular/linear independent."""

    CLGPN = "clgpn"
    CLDPN = "cldpn"
    IND = "ind"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"clgpn": cls.CLGPN, "cldpn": cls.CLDPN, "ind": cls.IND, "indclgpn": cls.IND}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown variant {value!r}; expected clgpn, cldpn or ind") from None

    @property
    def free_params(self):
        """Number of free emission parameters per regime."""
        return 8 if self is Variant.CLGPN else 6


def wrap_angle(a):
    """Wrap angles into ``[0, 2*pi)``."""
    out = np.mod(a, TWO_PI)
    # np.mod can round a tiny negative input up to exactly 2*pi
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def atan2_star(cos_component, sin_component):
    """Quadrant-aware inverse tangent returning an angle in ``[0, 2*pi)``.

    Raises
    ------
    DomainError
        If any input vector is the origin, where the direction is undefined.
    """
    c = np.asarray(cos_component, dtype=float)
    s = np.asarray(sin_component, dtype=float)
    if np.any((c == 0.0) & (s == 0.0)):
        raise DomainError("direction of the zero vector is undefined")
    return wrap_angle(np.arctan2(s, c))


def arc_distance(a, b):
    """Shortest arc length between angles, in ``[0, pi]``."""
    d = np.mod(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), TWO_PI)
    return np.pi - np.abs(np.pi - d)


@dataclass(frozen=True)
class RegimeParams:
    """Emission parameters of one hidden state.

    The latent covariance is ``[[sigma1_sq, s1*rho], [s1*rho, 1]]`` with
    ``s1 = sqrt(sigma1_sq)``.
    """

    mu1: float
    mu2: float
    sigma1_sq: float = 1.0
    rho: float = 0.0
    gamma0: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    sigma_y_sq: float = 1.0
    variant: Variant = Variant.CLGPN

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in PARAM_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("regime parameters must be finite")
        if self.sigma1_sq <= 0 or self.sigma_y_sq <= 0:
            raise ValueError("variances must be strictly positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.variant is Variant.CLDPN and (self.sigma1_sq != 1.0 or self.rho != 0.0):
            raise ValueError("CL-DPN regimes require sigma1_sq = 1 and rho = 0")
        if self.variant is Variant.IND and (self.gamma1 != 0.0 or self.gamma2 != 0.0):
            raise ValueError("Ind-CL-GPN regimes require gamma1 = gamma2 = 0")

    @property
    def mean(self):
        return np.array([self.mu1, self.mu2])

    @property
    def slopes(self):
        return np.array([self.gamma1, self.gamma2])

    @property
    def cov(self):
        s1 = np.sqrt(self.sigma1_sq)
        return np.array([[self.sigma1_sq, s1 * self.rho], [s1 * self.rho, 1.0]])

    @property
    def cov_inv(self):
        det = self.sigma1_sq * (1.0 - self.rho**2)
        s1 = np.sqrt(self.sigma1_sq)
        return np.array([[1.0, -s1 * self.rho], [-s1 * self.rho, self.sigma1_sq]]) / det

    def as_array(self):
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values, variant=Variant.CLGPN):
        return cls(*(float(v) for v in values), variant=variant)

    def replace(self, **changes):
        fields = {name: getattr(self, name) for name in PARAM_NAMES}
        fields["variant"] = self.variant
        fields.update(changes)
        return RegimeParams(**fields)


def params_to_array(params):
    """Stack a sequence of :class:`RegimeParams` into a ``(K, 8)`` array."""
    return np.vstack([p.as_array() for p in params])


def params_from_array(theta, variant=Variant.CLGPN):
    return [RegimeParams.from_array(row, variant) for row in np.atleast_2d(theta)]


@dataclass(frozen=True)
class RadiusTerms:
    """Gaussian kernel of the latent radius given ``(x, y)``.

    The radius conditional is proportional to ``r * N(r | m, v)`` on ``r > 0``.
    """

    c: np.ndarray
    v: np.ndarray
    m: np.ndarray
    w: np.ndarray


def log_norm_pdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def log_mvn2_pdf(z, mean, cov):
    """Log density of a bivariate normal; ``z`` has shape ``(..., 2)``."""
    z = np.asarray(z, dtype=float)
    diff = z - mean
    cov_inv = np.linalg.inv(cov)
    quad = np.einsum("...i,ij,...j->...", diff, cov_inv, diff)
    _, logdet = np.linalg.slogdet(cov)
    return -LOG_2PI - 0.5 * logdet - 0.5 * quad


def _log_tilt(u):
    """``log(1 + u * Phi(u) / phi(u))`` for a standardized mean ``u``.

    This is the log of ``sqrt(2 pi) exp(u^2/2) (u Phi(u) + phi(u))``, the part of
    ``int_0^inf r N(r | m, v) dr`` that is not a plain Gaussian factor.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)

    pos = u >= 0
    if np.any(pos):
        up = u[pos]
        with np.errstate(divide="ignore"):
            log_ratio = np.log(up) + special.log_ndtr(up) + 0.5 * up**2 + 0.5 * LOG_2PI
        out[pos] = np.logaddexp(0.0, log_ratio)

    mid = (u < 0) & (u >= _TAIL_CUTOFF)
    if np.any(mid):
        a = -u[mid]
        mills = np.sqrt(np.pi / 2.0) * special.erfcx(a / np.sqrt(2.0))
        out[mid] = np.log1p(-a * mills)

    tail = u < _TAIL_CUTOFF
    if np.any(tail):
        # Laplace continued fraction for the Mills ratio, R = 1/(a + q)
        a = -u[tail]
        f = a.copy()
        for j in range(_CF_TERMS, 1, -1):
            f = a + j / f
        q = 1.0 / f
        out[tail] = np.log(q) - np.log(a + q)
    return out


def _unit(x):
    x = np.asarray(x, dtype=float)
    return np.stack([np.cos(x), np.sin(x)], axis=-1)


def pn_log_density_cov(x, mean, cov):
    """Projected normal log density for an arbitrary 2x2 covariance."""
    x = np.asarray(x, dtype=float)
    w = _unit(x)
    cov_inv = np.linalg.inv(cov)
    a = np.einsum("...i,ij,...j->...", w, cov_inv, w)
    b = w @ (cov_inv @ np.asarray(mean, dtype=float))
    v = 1.0 / a
    m = v * b
    out = log_mvn2_pdf(np.asarray(mean, dtype=float), np.zeros(2), cov) + np.log(v) + _log_tilt(m / np.sqrt(v))
    return out if out.ndim else float(out)


def pn_log_density(x, p: RegimeParams):
    """Log density of the circular marginal ``PN2(mu, Sigma)`` at angle(s) ``x``."""
    return pn_log_density_cov(x, p.mean, p.cov)


def radius_terms(x, y, p: RegimeParams) -> RadiusTerms:
    """Compute ``c``, ``v`` and ``m`` of the radius kernel at ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = _unit(x)
    cov_inv = p.cov_inv
    c = w @ p.slopes
    a = np.einsum("...i,ij,...j->...", w, cov_inv, w)
    b = w @ (cov_inv @ p.mean)
    v = 1.0 / (c**2 / p.sigma_y_sq + a)
    m = v * (c * (y - p.gamma0) / p.sigma_y_sq + b)
    return RadiusTerms(c=c, v=v, m=m, w=w)


def clgpn_log_density(x, y, p: RegimeParams):
    """Joint log density of ``(x, y)`` with the latent radius integrated out.

    Completing the square in ``r`` gives::

        f(x, y) = N(y | g0, s2y) N2(mu | 0, Sigma) sqrt(2 pi v) exp(m^2 / 2v)
                  * [m Phi(m / sqrt v) + sqrt(v) phi(m / sqrt v)]
    """
    t = radius_terms(x, y, p)
    out = (
        log_norm_pdf(y, p.gamma0, p.sigma_y_sq)
        + log_mvn2_pdf(p.mean, np.zeros(2), p.cov)
        + np.log(t.v)
        + _log_tilt(t.m / np.sqrt(t.v))
    )
    return out if np.ndim(out) else float(out)


def linear_marginal(p: RegimeParams):
    """Mean and variance of ``y`` with both ``x`` and ``r`` integrated out."""
    g = p.slopes
    return p.gamma0 + g @ p.mean, float(g @ p.cov @ g + p.sigma_y_sq)


def observed_log_density(x, y, p: RegimeParams):
    """Log density of whatever is observed; NaN marks a missing coordinate.

    Both present gives :func:`clgpn_log_density`, only ``x`` the projected
    normal, only ``y`` its Gaussian marginal, neither gives 0.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    xm, ym = np.isnan(x), np.isnan(y)
    out = np.zeros(x.shape)
    both = ~xm & ~ym
    if np.any(both):
        out[both] = clgpn_log_density(x[both], y[both], p)
    only_x = ~xm & ym
    if np.any(only_x):
        out[only_x] = pn_log_density(x[only_x], p)
    only_y = xm & ~ym
    if np.any(only_y):
        mean, var = linear_marginal(p)
        out[only_y] = log_norm_pdf(y[only_y], mean, var)
    return out


def joint_xr_log_density(x, r, p: RegimeParams):
    """Log density of the polar pair ``(x, r)``: ``N2(r w | mu, Sigma) * r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radius must be strictly positive")
    z = r[..., None] * _unit(x)
    out = log_mvn2_pdf(z, p.mean, p.cov) + np.log(r)
    return out if np.ndim(out) else float(out)


def joint_xyr_log_density(x, y, r, p: RegimeParams):
    """Log density of ``(x, y, r)`` before the radius is integrated out."""
    r = np.asarray(r, dtype=float)
    out = joint_xr_log_density(x, r, p)
    mean_y = p.gamma0 + r * (p.gamma1 * np.cos(x) + p.gamma2 * np.sin(x))
    out = out + log_norm_pdf(y, mean_y, p.sigma_y_sq)
    return out if np.ndim(out) else float(out)


def sample_clgpn(p: RegimeParams, rng, size=None):
    """Draw ``(x, y, r)`` from the CL-GPN distribution.

    Parameters
    ----------
    p : RegimeParams
    rng : numpy.random.Generator
    size : int, optional
        Number of draws; scalars are returned when omitted.
    """
    n = 1 if size is None else int(size)
    chol = np.linalg.cholesky(p.cov)
    z = p.mean + rng.standard_normal((n, 2)) @ chol.T
    eps = rng.standard_normal(n) * np.sqrt(p.sigma_y_sq)
    y = p.gamma0 + z @ p.slopes + eps
    r = np.hypot(z[:, 0], z[:, 1])
    x = atan2_star(z[:, 0], z[:, 1])
    if size is None:
        return float(x[0]), float(y[0]), float(r[0])
    return x, y, r
