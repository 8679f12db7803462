"""Distance functions attached to sites: weighted Minkowski and Mahalanobis
gauges, user-supplied convex gauges, and Bregman divergences.

Every site function evaluates values, gradients, and Hessians analytically,
accepts single points ``(d,)`` or batches ``(A, d)``, and carries a certified
growth constant ``tau`` used by the search structures to size separation
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import as_vector

_DIRECTION_SEED = 20240601
_TAU_INFLATION = 1.10


class DomainError(ValueError):
    """Raised when a point falls outside a divergence's open domain."""


@dataclass(frozen=True)
class GaugeParams:
    """Fatness/smoothness constants of a gauge's unit ball.

    gamma: radius ratio of origin-centered inscribed/circumscribed balls.
    sigma: diameter ratio of the worst interior tangent ball to the body.
    """

    gamma: float
    sigma: float

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if not (0.0 < self.sigma <= 1.0):
            raise ValueError("sigma must lie in (0, 1]")


def tau_for_gauge(params: GaugeParams) -> float:
    """Growth constant sqrt(2 / (sigma * gamma^3)), clamped below at 1."""
    return max(1.0, float(np.sqrt(2.0 / (params.sigma * params.gamma**3))))


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Normalize x to an (A, dim) batch; report whether input was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.size != dim:
            raise ValueError(f"point has dimension {arr.size}, expected {dim}")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"expected shape (d,) or (A, d) with d={dim}")


class SiteFunction:
    """A distance function about a fixed site.

    Subclasses implement ``_values``, ``_gradients`` and ``_hessians`` on
    (A, d) batches of points. Scaling kinds are positively 1-homogeneous
    about the site; the Bregman kind is a divergence D(x, site) in its
    first argument.
    """

    kind: str = "abstract"
    is_scaling: bool = True

    def __init__(self, site, tau: float):
        self.site = as_vector(site)
        if not np.isfinite(tau) or tau <= 0:
            raise ValueError("admissibility gate: unbounded ratio")
        self.tau = max(1.0, float(tau))

    @property
    def dim(self) -> int:
        return self.site.size

    # -- evaluation ------------------------------------------------------

    def value(self, x):
        pts, single = _as_points(x, self.dim)
        self._check_domain(pts)
        vals = self._values(pts)
        return float(vals[0]) if single else vals

    def gradient(self, x):
        pts, single = _as_points(x, self.dim)
        self._check_domain(pts)
        self._check_off_site(pts)
        grads = self._gradients(pts)
        return grads[0] if single else grads

    def hessian(self, x):
        pts, single = _as_points(x, self.dim)
        self._check_domain(pts)
        self._check_off_site(pts)
        hs = self._hessians(pts)
        return hs[0] if single else hs

    def __call__(self, x):
        return self.value(x)

    # -- structure -------------------------------------------------------

    def resite(self, new_site) -> "SiteFunction":
        """Same distance shape translated to a new site."""
        raise NotImplementedError

    def euclid_value_bounds(self, dist: float) -> tuple[float, float]:
        """Bounds (lo, hi) on the minimum of f over any region whose
        Euclidean distance from the site is exactly ``dist``."""
        raise NotImplementedError

    def in_domain(self, x) -> bool:
        return True

    # -- hooks -----------------------------------------------------------

    def _check_domain(self, pts: np.ndarray) -> None:
        pass

    def _check_off_site(self, pts: np.ndarray) -> None:
        if self.is_scaling:
            v = pts - self.site[None, :]
            if np.any(np.all(v == 0.0, axis=1)):
                raise ValueError("gradient undefined at site")

    def _values(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _hessians(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def evaluate(f: SiteFunction, x):
    return f.value(x)


def gradient(f: SiteFunction, x):
    return f.gradient(x)


def hessian(f: SiteFunction, x):
    return f.hessian(x)


# ---------------------------------------------------------------------------
# Minkowski gauges
# ---------------------------------------------------------------------------


class MinkowskiDistance(SiteFunction):
    """f(x) = weight * ||x - site||_k for k > 1."""

    kind = "minkowski"
    is_scaling = True

    def __init__(self, site, k: float, weight: float = 1.0, tau: float | None = None):
        if k <= 1.0:
            raise ValueError("not smooth: Minkowski exponent must exceed 1")
        if weight <= 0.0:
            raise ValueError("weight must be positive")
        site = as_vector(site)
        self.site = site  # needed by the sampled-tau fallback below
        self.k = float(k)
        self.weight = float(weight)
        gamma, sigma = minkowski_gauge_params(self.k, site.size)
        self.params = GaugeParams(gamma, sigma) if sigma > 0 else None
        if tau is None:
            if self.k >= 2.0:
                tau = tau_for_gauge(self.params)
            else:
                # The unit ball loses its interior rolling ball at the axes for
                # k < 2, so the closed-form constant degenerates; fall back to a
                # sampled growth bound over directions (scale-free).
                tau = _TAU_INFLATION * _sampled_scaling_tau_raw(self)
        super().__init__(site, tau)

    def resite(self, new_site):
        return MinkowskiDistance(new_site, self.k, self.weight, tau=self.tau)

    def euclid_value_bounds(self, dist):
        d = self.dim
        ratio = d ** abs(0.5 - 1.0 / self.k)  # max of ||v||_k / ||v||_2 or its inverse
        if self.k >= 2.0:
            lo, hi = self.weight / ratio, self.weight
        else:
            lo, hi = self.weight, self.weight * ratio
        return lo * dist, hi * dist

    def _rel(self, pts):
        return pts - self.site[None, :]

    def _values(self, pts):
        v = self._rel(pts)
        m = np.max(np.abs(v), axis=1)
        safe = np.where(m > 0.0, m, 1.0)
        t = np.abs(v) / safe[:, None]
        s = np.sum(t**self.k, axis=1)
        return self.weight * m * s ** (1.0 / self.k)

    def _gradients(self, pts):
        k = self.k
        v = self._rel(pts)
        m = np.max(np.abs(v), axis=1)
        t = v / m[:, None]
        a = np.abs(t)
        s = np.sum(a**k, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = s[:, None] ** (1.0 / k - 1.0) * a ** (k - 1.0) * np.sign(t)
        return self.weight * g

    def _hessians(self, pts):
        k = self.k
        v = self._rel(pts)
        m = np.max(np.abs(v), axis=1)
        t = v / m[:, None]
        a = np.abs(t)
        s = np.sum(a**k, axis=1)
        b = a ** (k - 1.0) * np.sign(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            diag = s[:, None] ** (1.0 / k - 1.0) * a ** (k - 2.0)
            outer = s[:, None, None] ** (1.0 / k - 2.0) * b[:, :, None] * b[:, None, :]
        hs = -outer
        idx = np.arange(self.dim)
        hs[:, idx, idx] += diag
        return (self.weight * (k - 1.0) / m)[:, None, None] * hs


# ---------------------------------------------------------------------------
# Mahalanobis gauges
# ---------------------------------------------------------------------------


class MahalanobisDistance(SiteFunction):
    """f(x) = sqrt((x - site)^T M (x - site)) with M symmetric positive-definite."""

    kind = "mahalanobis"
    is_scaling = True

    def __init__(self, site, matrix, tau: float | None = None):
        M = np.asarray(matrix, dtype=float)
        site = as_vector(site)
        if M.shape != (site.size, site.size):
            raise ValueError("matrix shape does not match site dimension")
        if not np.allclose(M, M.T, atol=1e-10):
            raise ValueError("matrix must be symmetric")
        eigvals = np.linalg.eigvalsh(M)
        if eigvals[0] <= 0.0:
            raise ValueError("matrix must be positive-definite")
        self.matrix = 0.5 * (M + M.T)
        self.eig_min = float(eigvals[0])
        self.eig_max = float(eigvals[-1])
        self.sqrt_eig_min = float(np.sqrt(self.eig_min))
        self.sqrt_eig_max = float(np.sqrt(self.eig_max))
        # Unit ball is an ellipsoid with semi-axes 1/sqrt(lambda_i): both the
        # fatness and smoothness ratios reduce to sqrt(eig_min / eig_max).
        axis_ratio = float(np.sqrt(self.eig_min / self.eig_max))
        self.params = GaugeParams(axis_ratio, axis_ratio)
        if tau is None:
            tau = tau_for_gauge(self.params)
        super().__init__(site, tau)

    def resite(self, new_site):
        return MahalanobisDistance(new_site, self.matrix, tau=self.tau)

    def euclid_value_bounds(self, dist):
        return self.sqrt_eig_min * dist, self.sqrt_eig_max * dist

    def _values(self, pts):
        v = pts - self.site[None, :]
        q = np.einsum("ad,de,ae->a", v, self.matrix, v)
        return np.sqrt(np.maximum(q, 0.0))

    def _gradients(self, pts):
        v = pts - self.site[None, :]
        mv = v @ self.matrix
        f = np.sqrt(np.maximum(np.einsum("ad,ad->a", v, mv), 0.0))
        return mv / f[:, None]

    def _hessians(self, pts):
        v = pts - self.site[None, :]
        mv = v @ self.matrix
        f = np.sqrt(np.maximum(np.einsum("ad,ad->a", v, mv), 0.0))
        outer = mv[:, :, None] * mv[:, None, :]
        return self.matrix[None, :, :] / f[:, None, None] - outer / (f**3)[:, None, None]


# ---------------------------------------------------------------------------
# User-supplied gauges
# ---------------------------------------------------------------------------


class CustomGaugeDistance(SiteFunction):
    """f(x) = gauge(x - site) for a user-supplied smooth convex gauge.

    ``gauge_value``/``gauge_gradient``/``gauge_hessian`` are batched callables
    about the origin. The declared GaugeParams certify the growth constant.
    """

    kind = "gauge"
    is_scaling = True

    def __init__(self, site, gauge_value, gauge_gradient, gauge_hessian,
                 params: GaugeParams, tau: float | None = None,
                 value_bounds: tuple[float, float] | None = None):
        self._gv = gauge_value
        self._gg = gauge_gradient
        self._gh = gauge_hessian
        self.params = params
        if tau is None:
            tau = tau_for_gauge(params)
        super().__init__(site, tau)
        if value_bounds is None:
            dirs = unit_directions(self.dim, 512, _DIRECTION_SEED)
            vals = np.asarray(gauge_value(dirs), dtype=float)
            value_bounds = (0.95 * float(vals.min()), 1.05 * float(vals.max()))
        self._bounds = value_bounds

    def resite(self, new_site):
        return CustomGaugeDistance(new_site, self._gv, self._gg, self._gh,
                                   self.params, tau=self.tau, value_bounds=self._bounds)

    def euclid_value_bounds(self, dist):
        return self._bounds[0] * dist, self._bounds[1] * dist

    def _values(self, pts):
        return np.asarray(self._gv(pts - self.site[None, :]), dtype=float)

    def _gradients(self, pts):
        return np.asarray(self._gg(pts - self.site[None, :]), dtype=float)

    def _hessians(self, pts):
        return np.asarray(self._gh(pts - self.site[None, :]), dtype=float)


# ---------------------------------------------------------------------------
# Bregman divergences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BregmanSpec:
    """A strictly convex generator F with its derivatives and working domain.

    ``hess`` depends on ``hess_kind``: "diag" maps (A, d) points to (A, d)
    diagonal entries, "const" is a fixed (d, d) matrix, "full" maps (A, d)
    to (A, d, d). ``eig_low``/``eig_high`` bound the Hessian eigenvalues over
    the domain box when known analytically.
    """

    name: str
    dim: int
    f: object
    grad: object
    hess_kind: str
    hess: object
    domain_low: np.ndarray
    domain_high: np.ndarray
    eig_low: float | None = None
    eig_high: float | None = None
    matrix: np.ndarray | None = None

    def in_domain(self, x) -> np.ndarray | bool:
        pts, single = _as_points(x, self.dim)
        ok = np.all(pts > self.domain_low[None, :], axis=1) & np.all(
            pts < self.domain_high[None, :], axis=1
        )
        return bool(ok[0]) if single else ok

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.domain_low)) and np.all(np.isfinite(self.domain_high)))

    def values(self, pts):
        return np.asarray(self.f(pts), dtype=float)

    def gradients(self, pts):
        return np.asarray(self.grad(pts), dtype=float)

    def hessian_at(self, x) -> np.ndarray:
        pts, _ = _as_points(x, self.dim)
        if self.hess_kind == "const":
            return np.asarray(self.hess, dtype=float)
        if self.hess_kind == "diag":
            return np.diag(np.asarray(self.hess(pts), dtype=float)[0])
        return np.asarray(self.hess(pts), dtype=float)[0]

    def hessian_norms(self, pts) -> np.ndarray:
        """Spectral norms of the Hessian at each point."""
        if self.hess_kind == "const":
            w = np.linalg.eigvalsh(np.asarray(self.hess, dtype=float))
            return np.full(len(pts), float(np.max(np.abs(w))))
        if self.hess_kind == "diag":
            return np.max(np.abs(np.asarray(self.hess(pts), dtype=float)), axis=1)
        hs = np.asarray(self.hess(pts), dtype=float)
        return np.max(np.abs(np.linalg.eigvalsh(hs)), axis=1)

    def hessian_eig_range(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """(min, max) Hessian eigenvalue at each point."""
        if self.hess_kind == "const":
            w = np.linalg.eigvalsh(np.asarray(self.hess, dtype=float))
            lo = np.full(len(pts), float(w[0]))
            hi = np.full(len(pts), float(w[-1]))
            return lo, hi
        if self.hess_kind == "diag":
            dg = np.asarray(self.hess(pts), dtype=float)
            return np.min(dg, axis=1), np.max(dg, axis=1)
        w = np.linalg.eigvalsh(np.asarray(self.hess(pts), dtype=float))
        return w[:, 0], w[:, -1]

    def divergence(self, q, p) -> np.ndarray:
        """D(q, p) batched over rows of q (p a single point)."""
        qp, _ = _as_points(q, self.dim)
        p = as_vector(p)
        fp = float(self.values(p[None, :])[0])
        gp = self.gradients(p[None, :])[0]
        return self.values(qp) - fp - (qp - p[None, :]) @ gp


def _expand_bound(val, dim, default):
    if val is None:
        return np.full(dim, default)
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    return as_vector(arr)


def squared_euclidean_spec(dim: int) -> BregmanSpec:
    return BregmanSpec(
        name="squared-euclidean",
        dim=dim,
        f=lambda x: np.sum(x * x, axis=1),
        grad=lambda x: 2.0 * x,
        hess_kind="const",
        hess=2.0 * np.eye(dim),
        domain_low=np.full(dim, -np.inf),
        domain_high=np.full(dim, np.inf),
        eig_low=2.0,
        eig_high=2.0,
    )


def squared_mahalanobis_spec(matrix, domain_low=None, domain_high=None) -> BregmanSpec:
    M = np.asarray(matrix, dtype=float)
    dim = M.shape[0]
    if not np.allclose(M, M.T, atol=1e-10):
        raise ValueError("matrix must be symmetric")
    w = np.linalg.eigvalsh(M)
    if w[0] <= 0:
        raise ValueError("matrix must be positive-definite")
    M = 0.5 * (M + M.T)
    return BregmanSpec(
        name="squared-mahalanobis",
        dim=dim,
        f=lambda x: np.einsum("ad,de,ae->a", x, M, x),
        grad=lambda x: 2.0 * (x @ M),
        hess_kind="const",
        hess=2.0 * M,
        domain_low=_expand_bound(domain_low, dim, -np.inf),
        domain_high=_expand_bound(domain_high, dim, np.inf),
        eig_low=2.0 * float(w[0]),
        eig_high=2.0 * float(w[-1]),
        matrix=M,
    )


def generalized_kl_spec(dim: int, domain_low=0.1, domain_high=1.0) -> BregmanSpec:
    lo = _expand_bound(domain_low, dim, 0.1)
    hi = _expand_bound(domain_high, dim, 1.0)
    if np.any(lo <= 0.0):
        raise ValueError("KL domain must be strictly positive")
    return BregmanSpec(
        name="generalized-kl",
        dim=dim,
        f=lambda x: np.sum(x * np.log(x), axis=1),
        grad=lambda x: np.log(x) + 1.0,
        hess_kind="diag",
        hess=lambda x: 1.0 / x,
        domain_low=lo,
        domain_high=hi,
        eig_low=1.0 / float(np.max(hi)),
        eig_high=1.0 / float(np.min(lo)),
    )


def itakura_saito_spec(dim: int, domain_low=0.1, domain_high=1.0) -> BregmanSpec:
    lo = _expand_bound(domain_low, dim, 0.1)
    hi = _expand_bound(domain_high, dim, 1.0)
    if np.any(lo <= 0.0):
        raise ValueError("Itakura-Saito domain must be strictly positive")
    return BregmanSpec(
        name="itakura-saito",
        dim=dim,
        f=lambda x: -np.sum(np.log(x), axis=1),
        grad=lambda x: -1.0 / x,
        hess_kind="diag",
        hess=lambda x: 1.0 / (x * x),
        domain_low=lo,
        domain_high=hi,
        eig_low=1.0 / float(np.max(hi)) ** 2,
        eig_high=1.0 / float(np.min(lo)) ** 2,
    )


BUILTIN_BREGMAN = {
    "squared-euclidean": squared_euclidean_spec,
    "squared-mahalanobis": squared_mahalanobis_spec,
    "generalized-kl": generalized_kl_spec,
    "itakura-saito": itakura_saito_spec,
}


class BregmanDistance(SiteFunction):
    """D_F(x, site) as a distance function of the first argument."""

    kind = "bregman"
    is_scaling = False

    def __init__(self, spec: BregmanSpec, site, tau: float | None = None):
        site = as_vector(site)
        if site.size != spec.dim:
            raise ValueError("site dimension does not match generator")
        if not bool(spec.in_domain(site)):
            raise ValueError("site outside Bregman domain")
        self.site = site  # needed by the sampled-tau estimate below
        self.spec = spec
        self._site_value = float(spec.values(site[None, :])[0])
        self._site_grad = spec.gradients(site[None, :])[0]
        if tau is None:
            tau = _TAU_INFLATION * _sampled_bregman_tau_raw(self)
        super().__init__(site, tau)

    def resite(self, new_site):
        return BregmanDistance(self.spec, new_site, tau=self.tau)

    def in_domain(self, x):
        return self.spec.in_domain(x)

    def euclid_value_bounds(self, dist):
        lo = self.spec.eig_low
        hi = self.spec.eig_high
        if lo is None or hi is None:
            raise ValueError("generator lacks Hessian eigenvalue bounds")
        return 0.5 * lo * dist * dist, 0.5 * hi * dist * dist

    def _check_domain(self, pts):
        ok = np.all(pts > self.spec.domain_low[None, :], axis=1) & np.all(
            pts < self.spec.domain_high[None, :], axis=1
        )
        if not np.all(ok):
            raise DomainError("query outside domain")

    def _values(self, pts):
        rel = pts - self.site[None, :]
        return self.spec.values(pts) - self._site_value - rel @ self._site_grad

    def _gradients(self, pts):
        return self.spec.gradients(pts) - self._site_grad[None, :]

    def _hessians(self, pts):
        if self.spec.hess_kind == "const":
            H = np.asarray(self.spec.hess, dtype=float)
            return np.broadcast_to(H, (len(pts),) + H.shape).copy()
        if self.spec.hess_kind == "diag":
            dg = np.asarray(self.spec.hess(pts), dtype=float)
            hs = np.zeros((len(pts), self.dim, self.dim))
            idx = np.arange(self.dim)
            hs[:, idx, idx] = dg
            return hs
        return np.asarray(self.spec.hess(pts), dtype=float)


# ---------------------------------------------------------------------------
# Constructors matching the public operation surface
# ---------------------------------------------------------------------------


def make_minkowski(p, k: float, weight: float = 1.0, tau: float | None = None) -> MinkowskiDistance:
    return MinkowskiDistance(p, k, weight, tau=tau)


def make_mahalanobis(p, matrix, tau: float | None = None) -> MahalanobisDistance:
    return MahalanobisDistance(p, matrix, tau=tau)


def make_bregman(spec: BregmanSpec, p, tau: float | None = None) -> BregmanDistance:
    return BregmanDistance(spec, p, tau=tau)


def make_custom_gauge(p, gauge_value, gauge_gradient, gauge_hessian,
                      params: GaugeParams, tau: float | None = None) -> CustomGaugeDistance:
    return CustomGaugeDistance(p, gauge_value, gauge_gradient, gauge_hessian, params, tau=tau)


# ---------------------------------------------------------------------------
# Sampled growth constants and gauge-ball geometry
# ---------------------------------------------------------------------------


def unit_directions(dim: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((count, dim))
    norms = np.linalg.norm(u, axis=1)
    norms[norms == 0] = 1.0
    return u / norms[:, None]


def admissibility_ratios(fn: SiteFunction, pts: np.ndarray,
                         value_floor: float = 1e-12):
    """Per-sample growth ratios of a site function.

    Returns (grad_ratio, hess_ratio, dir_ratio, used_mask) where
    grad_ratio = ||grad f|| * ||x - p|| / f,
    hess_ratio = sqrt(||hess f|| * ||x - p||^2 / f),
    dir_ratio  = <grad f, x - p> / f.
    Samples with f below ``value_floor`` or at the site are skipped.
    """
    p = fn.site
    rel = pts - p[None, :]
    dist = np.linalg.norm(rel, axis=1)
    vals = fn._values(pts)
    used = (vals >= value_floor) & (dist > 0.0)
    if not np.any(used):
        empty = np.zeros(0)
        return empty, empty, empty, used
    sel = pts[used]
    rel = rel[used]
    dist = dist[used]
    vals = vals[used]
    grads = fn._gradients(sel)
    gnorm = np.linalg.norm(grads, axis=1)
    if isinstance(fn, BregmanDistance) and fn.spec.hess_kind in ("const", "diag"):
        hnorm = fn.spec.hessian_norms(sel)
    else:
        hs = fn._hessians(sel)
        hnorm = np.max(np.abs(np.linalg.eigvalsh(hs)), axis=1)
    grad_ratio = gnorm * dist / vals
    hess_ratio = np.sqrt(np.maximum(hnorm, 0.0) * dist * dist / vals)
    dir_ratio = np.einsum("ad,ad->a", grads, rel) / vals
    return grad_ratio, hess_ratio, dir_ratio, used


def _sampled_scaling_tau_raw(fn: SiteFunction, count: int = 1024,
                             seed: int = _DIRECTION_SEED) -> float:
    """Raw sampled growth constant for a scaling function.

    1-homogeneity makes the ratios constant along rays, so sampling unit
    directions about the site covers all of space.
    """
    dirs = unit_directions(fn.dim, count, seed)
    g, h, _, _ = admissibility_ratios(fn, fn.site[None, :] + dirs)
    if g.size == 0 or not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise ValueError("admissibility gate: unbounded ratio")
    return max(1.0, float(np.max(g)), float(np.max(h)))


def _sampled_bregman_tau_raw(fn: BregmanDistance, count: int = 2048,
                             seed: int = _DIRECTION_SEED) -> float:
    spec = fn.spec
    if spec.hess_kind == "const" and not spec.bounded:
        # Quadratic generator: ratios depend only on direction.
        dirs = unit_directions(fn.dim, min(count, 1024), seed)
        pts = fn.site[None, :] + dirs
    else:
        if not spec.bounded:
            raise ValueError("admissibility gate: unbounded domain needs declared tau")
        rng = np.random.default_rng(seed)
        pts = rng.uniform(spec.domain_low, spec.domain_high, size=(count, fn.dim))
    g, h, _, _ = admissibility_ratios(fn, pts)
    if g.size < 10:
        raise ValueError("degenerate sample")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise ValueError("admissibility gate: unbounded ratio")
    return max(1.0, float(np.max(g)), float(np.max(h)))


_MINK_GEOMETRY_CACHE: dict[tuple[float, int], tuple[float, float]] = {}


def minkowski_gauge_params(k: float, dim: int) -> tuple[float, float]:
    """(gamma, sigma) for the l_k unit ball in the given dimension.

    gamma is exact: d^(-|1/2 - 1/k|). sigma comes from sampling the boundary
    curvature; for k < 2 the curvature blows up at the axes and sigma is
    reported as 0 (no positive smoothness constant exists).
    """
    key = (round(float(k), 12), int(dim))
    if key in _MINK_GEOMETRY_CACHE:
        return _MINK_GEOMETRY_CACHE[key]
    gamma = float(dim) ** (-abs(0.5 - 1.0 / k))
    if k < 2.0:
        sigma = 0.0
    else:
        # Placeholder entry so the probe construction below does not recurse.
        _MINK_GEOMETRY_CACHE[key] = (gamma, 0.0)
        probe = MinkowskiDistance(np.zeros(dim), k, 1.0, tau=1.0)
        dirs = _minkowski_probe_directions(dim)
        sigma = _gauge_sigma_from_curvature(probe, dirs)
    _MINK_GEOMETRY_CACHE[key] = (gamma, sigma)
    return gamma, sigma


def _minkowski_probe_directions(dim: int) -> np.ndarray:
    """Structured boundary probes: coordinate-plane and diagonal-plane fans
    plus a seeded spread. The l_k ball is umbilic at the full diagonal, so
    plane sections through it capture the extreme curvature."""
    fans = []
    angles = (np.arange(181) + 0.5) * (np.pi / 2.0) / 181.0
    e1 = np.zeros(dim)
    e1[0] = 1.0
    if dim >= 2:
        e2 = np.zeros(dim)
        e2[1] = 1.0
        fans.append(np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), e2))
        diag = np.ones(dim) / np.sqrt(dim)
        fans.append(np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), diag))
    fans.append(unit_directions(dim, 512, _DIRECTION_SEED))
    dirs = np.vstack(fans)
    norms = np.linalg.norm(dirs, axis=1)
    return dirs / norms[:, None]


def _gauge_sigma_from_curvature(fn: SiteFunction, dirs: np.ndarray) -> float:
    """Smoothness constant from the sampled boundary shape operator."""
    vals = fn._values(dirs)
    boundary = dirs / vals[:, None]
    radii = np.linalg.norm(boundary, axis=1)
    grads = fn._gradients(boundary)
    hessians = fn._hessians(boundary)
    gnorm = np.linalg.norm(grads, axis=1)
    normals = grads / gnorm[:, None]
    eye = np.eye(fn.dim)[None, :, :]
    proj = eye - normals[:, :, None] * normals[:, None, :]
    shape_op = np.einsum("aij,ajk,akl->ail", proj, hessians, proj) / gnorm[:, None, None]
    curvatures = np.linalg.eigvalsh(shape_op)[:, -1]
    kappa_max = float(np.max(curvatures))
    if kappa_max <= 0.0:
        return 1.0
    r_min = 1.0 / kappa_max
    diam = 2.0 * float(np.max(radii))
    return min(1.0, 2.0 * r_min / diam)


def gauge_params_from_samples(fn: SiteFunction, count: int = 1024,
                              seed: int = _DIRECTION_SEED) -> GaugeParams:
    """Estimate (gamma, sigma) of a gauge by boundary sampling."""
    dirs = unit_directions(fn.dim, count, seed)
    vals = fn._values(fn.site[None, :] + dirs)
    radii = 1.0 / vals
    gamma = float(np.min(radii) / np.max(radii))
    sigma = _gauge_sigma_from_curvature(fn.resite(np.zeros(fn.dim)), dirs)
    return GaugeParams(min(1.0, gamma), max(min(1.0, sigma), 1e-12))
