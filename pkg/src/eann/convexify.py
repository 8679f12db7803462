"""Prune, rescale, and concavify a family of separated distance functions.

Over a ball whose sites are all (2*tau)-separated, the family is divided by
five times its smallest ball minimum, mapped to the unit ball, and shifted
by the common offset phi(x) = (1 - ||x||^2)/8. The rescaled members then
have values in [1/5, 4/5], gradient norms at most 1/4, and Hessian norms at
most 1/16, so the offset makes every member concave while leaving argmins
and vertical gaps untouched.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._batch import PairedFamily, batch_value_bounds, batch_values
from .distances import BregmanDistance, DomainError, MahalanobisDistance, MinkowskiDistance, SiteFunction
from .geom import EuclideanBall, is_separated

PRUNE_DELTA = 0.01
LAMBDA_PLUS = 0.25  # curvature of the concavifying offset
CURVATURE_LOW = -5.0 / 16.0
CURVATURE_HIGH = -3.0 / 16.0


class MinEstimate(NamedTuple):
    value: float
    argmin: np.ndarray


def _check_ball_in_domain(f: SiteFunction, ball: EuclideanBall) -> None:
    if isinstance(f, BregmanDistance):
        lo = f.spec.domain_low
        hi = f.spec.domain_high
        if np.any(ball.center - ball.radius <= lo) or np.any(ball.center + ball.radius >= hi):
            raise DomainError("ball outside domain")


def _exact_min_weighted_l2(f: MinkowskiDistance, ball: EuclideanBall) -> MinEstimate:
    v = f.site - ball.center
    dist = float(np.linalg.norm(v))
    arg = ball.center + ball.radius * v / dist
    return MinEstimate(f.weight * (dist - ball.radius), arg)


def _exact_min_mahalanobis(f: MahalanobisDistance, ball: EuclideanBall) -> MinEstimate:
    # Trust-region subproblem: minimize (y-b)^T M (y-b) over ||y|| <= r.
    b = f.site - ball.center
    r = ball.radius
    w, Q = np.linalg.eigh(f.matrix)
    bt = Q.T @ b
    target = r * r

    def radius_sq(lam: float) -> float:
        y = w * bt / (w + lam)
        return float(np.dot(y, y))

    lo = 0.0
    hi = max(1.0, float(w[-1]) * float(np.linalg.norm(b)) / r)
    while radius_sq(hi) > target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if radius_sq(mid) > target:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    y = w * bt / (w + lam)
    x = ball.center + Q @ y
    diff = y - bt
    val = float(np.sqrt(max(0.0, np.dot(diff * w, diff))))
    return MinEstimate(val, x)


def _segment_argmin(f: SiteFunction, a: np.ndarray, b: np.ndarray, rounds: int = 26) -> np.ndarray:
    """Grid-bracketing search for the min of a convex function on a segment,
    batching the evaluations of each refinement round."""
    lo, hi = 0.0, 1.0
    span = b - a
    grid = np.linspace(0.0, 1.0, 9)
    for _ in range(rounds):
        ts = lo + (hi - lo) * grid
        vals = f.value(a[None, :] + ts[:, None] * span[None, :])
        j = int(np.argmin(vals))
        lo_new = lo + (hi - lo) * grid[max(j - 1, 0)]
        hi_new = lo + (hi - lo) * grid[min(j + 1, 8)]
        lo, hi = lo_new, hi_new
    return a + 0.5 * (lo + hi) * span


def _descend_on_ball(f: SiteFunction, ball: EuclideanBall, x0: np.ndarray) -> MinEstimate:
    c, r = ball.center, ball.radius

    def proj(x):
        v = x - c
        n = float(np.linalg.norm(v))
        return x if n <= r else c + v * (r / n)

    x = proj(x0)
    fx = f.value(x)
    ladder = 0.5 ** np.arange(40)
    stalls = 0
    for _ in range(25):
        f_prev = fx
        g = f.gradient(x)
        gn = float(np.linalg.norm(g))
        if gn < 1e-300:
            break
        steps = (r / gn) * ladder
        cand = x[None, :] - steps[:, None] * g[None, :]
        v = cand - c[None, :]
        nv = np.linalg.norm(v, axis=1)
        scale = np.minimum(1.0, r / np.where(nv > 0, nv, 1.0))
        cand = c[None, :] + v * scale[:, None]
        vals = f.value(cand)
        j = int(np.argmin(vals))
        if vals[j] >= fx:
            break
        x, fx = cand[j], float(vals[j])
        if abs(f_prev - fx) <= 1e-16 * (1.0 + abs(fx)):
            stalls += 1
            if stalls >= 2:
                break
        else:
            stalls = 0

    # The minimizer sits on the boundary (the site is outside the ball), so
    # finish with Frank-Wolfe steps: line search toward the boundary vertex
    # minimizing the linear model.
    for _ in range(25):
        g = f.gradient(x)
        gn = float(np.linalg.norm(g))
        if gn < 1e-300:
            break
        vertex = c - r * g / gn
        xn = _segment_argmin(f, x, vertex)
        fn = f.value(xn)
        if fn >= fx - 1e-17 * (1.0 + abs(fx)):
            break
        x, fx = xn, fn
    return MinEstimate(fx, x)


def estimate_min_on_ball(f: SiteFunction, ball: EuclideanBall, budget: int | None = None,
                         check_separation: bool = True) -> MinEstimate:
    """Estimate of min f over the ball, within a (1 + 0.01) factor above it.

    The returned value is f evaluated at the returned point, so it always
    upper-bounds the true minimum. Weighted Euclidean and Mahalanobis kinds
    are solved in closed form; other kinds use grid seeding plus projected
    descent (the objectives are convex, so descent reaches the ball optimum).
    """
    if check_separation and not is_separated(f.site, ball, 2.0 * f.tau):
        raise ValueError("insufficient separation")
    _check_ball_in_domain(f, ball)

    if isinstance(f, MinkowskiDistance) and f.k == 2.0:
        return _exact_min_weighted_l2(f, ball)
    if isinstance(f, MahalanobisDistance):
        return _exact_min_mahalanobis(f, ball)

    d = ball.center.size
    if budget is None:
        budget = max(256, 4**d)
    per_axis = max(2, int(np.ceil(budget ** (1.0 / d))))
    axes = [np.linspace(ball.center[i] - ball.radius, ball.center[i] + ball.radius, per_axis)
            for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    rel = grid - ball.center[None, :]
    norms = np.linalg.norm(rel, axis=1)
    scale = np.minimum(1.0, ball.radius / np.where(norms > 0, norms, 1.0))
    seeds = ball.center[None, :] + rel * scale[:, None]
    # Extra seed facing the site: the minimizer of any gauge lies there.
    v = f.site - ball.center
    vn = float(np.linalg.norm(v))
    if vn > 0:
        seeds = np.vstack([seeds, ball.center + ball.radius * v / vn])
    vals = batch_values([f], seeds)[:, 0]
    order = np.argsort(vals)
    best = MinEstimate(float(vals[order[0]]), seeds[order[0]])
    for idx in order[:3]:
        cand = _descend_on_ball(f, ball, seeds[idx])
        if cand.value < best.value:
            best = cand
    return best


def _exact_min_weighted_l2_batch(fns, ball: EuclideanBall) -> np.ndarray:
    P = np.stack([f.site for f in fns])
    W = np.array([f.weight for f in fns])
    dists = np.linalg.norm(P - ball.center[None, :], axis=1) - ball.radius
    return W * dists


def _exact_min_mahalanobis_batch(fns, ball: EuclideanBall) -> np.ndarray:
    Ms = np.stack([f.matrix for f in fns])
    P = np.stack([f.site for f in fns])
    r = ball.radius
    w, Q = np.linalg.eigh(Ms)
    b = P - ball.center[None, :]
    bt = np.einsum("mij,mi->mj", Q, b)
    target = r * r

    def radius_sq(lam):
        y = w * bt / (w + lam[:, None])
        return np.einsum("md,md->m", y, y)

    m = len(fns)
    lo = np.zeros(m)
    hi = np.maximum(1.0, w[:, -1] * np.linalg.norm(b, axis=1) / r)
    for _ in range(60):
        grow = radius_sq(hi) > target
        if not np.any(grow):
            break
        hi = np.where(grow, hi * 2.0, hi)
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        over = radius_sq(mid) > target
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    lam = 0.5 * (lo + hi)
    y = w * bt / (w + lam[:, None])
    diff = y - bt
    return np.sqrt(np.maximum(np.einsum("md,md,md->m", diff, w, diff), 0.0))


def _face_seeds(fns, ball: EuclideanBall) -> np.ndarray:
    """Ball-boundary points facing each site (exact minimizers for
    Euclidean-like gauges, good starts otherwise)."""
    c, r = ball.center, ball.radius
    P = np.stack([f.site for f in fns])
    V = P - c[None, :]
    nv = np.linalg.norm(V, axis=1)
    nv = np.where(nv > 0, nv, 1.0)
    return c[None, :] + r * V / nv[:, None]


def _fast_fw_refine(fam: PairedFamily, ball: EuclideanBall, X: np.ndarray,
                    steps: int = 4, rounds: int = 3) -> np.ndarray:
    """Lockstep Frank-Wolfe from the given starts; batched line searches.
    Returned values upper-bound the true minima (each is a feasible value)."""
    c, r = ball.center, ball.radius
    grid = np.linspace(0.0, 1.0, 9)
    for _ in range(steps):
        G = fam.gradients(X)
        gn = np.linalg.norm(G, axis=1)
        gn = np.where(gn > 0, gn, 1.0)
        vertex = c[None, :] - r * G / gn[:, None]
        span = vertex - X
        lo = np.zeros(fam.m)
        hi = np.ones(fam.m)
        for _ in range(rounds):
            ts = lo[None, :] + (hi - lo)[None, :] * grid[:, None]  # (9, m)
            pts = X[None, :, :] + ts[:, :, None] * span[None, :, :]
            vals = fam.grid_values(pts)
            j = np.argmin(vals, axis=0)
            lo_new = lo + (hi - lo) * grid[np.maximum(j - 1, 0)]
            hi_new = lo + (hi - lo) * grid[np.minimum(j + 1, 8)]
            lo, hi = lo_new, hi_new
        X = X + (0.5 * (lo + hi))[:, None] * span
    return fam.values(X)


def fast_min_estimates(fns: list[SiteFunction], ball: EuclideanBall) -> np.ndarray:
    """Vectorized per-member ball minima, exact for Euclidean-like kinds and
    slightly above-true for the rest; used by the index build path where a
    fraction of a percent of slack only shifts constants."""
    if len(fns) == 0:
        return np.zeros(0)
    _check_ball_in_domain(fns[0], ball)
    vals = np.empty(len(fns))
    groups: dict[str, list[int]] = {"l2": [], "mahal": [], "fw": []}
    for i, f in enumerate(fns):
        if isinstance(f, MinkowskiDistance) and f.k == 2.0:
            groups["l2"].append(i)
        elif isinstance(f, MahalanobisDistance):
            groups["mahal"].append(i)
        else:
            groups["fw"].append(i)
    if groups["l2"]:
        idx = groups["l2"]
        vals[idx] = _exact_min_weighted_l2_batch([fns[i] for i in idx], ball)
    if groups["mahal"]:
        idx = groups["mahal"]
        vals[idx] = _exact_min_mahalanobis_batch([fns[i] for i in idx], ball)
    if groups["fw"]:
        idx = groups["fw"]
        sub = [fns[i] for i in idx]
        fam = PairedFamily(sub)
        fam.trust_domain = True
        vals[idx] = _fast_fw_refine(fam, ball, _face_seeds(sub, ball))
    return vals


class NormalizedFamily:
    """Kept members rescaled to the unit ball: g_i(u) = f_i(c + r*u) / h."""

    def __init__(self, ball: EuclideanBall, scale_h: float, kept_indices, kept_fns,
                 pruned_indices, pruned_estimates, f1_min: float):
        self.ball = ball
        self.scale_h = float(scale_h)
        self.kept_indices = list(kept_indices)
        self.kept_fns = list(kept_fns)
        self.pruned_indices = list(pruned_indices)
        self.pruned_estimates = list(pruned_estimates)
        self.f1_min = float(f1_min)

    @property
    def size(self) -> int:
        return len(self.kept_fns)

    def world_points(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.ball.center[None, :] + self.ball.radius * U

    def values_matrix(self, U: np.ndarray) -> np.ndarray:
        return batch_values(self.kept_fns, self.world_points(U)) / self.scale_h

    def member_values(self, pos: int, U: np.ndarray) -> np.ndarray:
        X = self.world_points(U)
        return self.kept_fns[pos]._values(X) / self.scale_h

    def member_gradients(self, pos: int, U: np.ndarray) -> np.ndarray:
        X = self.world_points(U)
        return self.kept_fns[pos]._gradients(X) * (self.ball.radius / self.scale_h)

    def member_hessians(self, pos: int, U: np.ndarray) -> np.ndarray:
        X = self.world_points(U)
        return self.kept_fns[pos]._hessians(X) * (self.ball.radius**2 / self.scale_h)


def normalize(family: list[SiteFunction], ball: EuclideanBall, indices=None,
              check_separation: bool = True, accuracy: str = "high") -> NormalizedFamily:
    """Rescale a separated family over a ball, pruning members that cannot
    touch the lower envelope there.

    A member is pruned when its estimated ball minimum exceeds twice the
    family minimum (with 1% slack); such members exceed the smallest member
    throughout the ball. The scale is h = 5 * min_i estimate_i. Cheap
    distance-sandwich bounds skip the estimation of members that provably
    land beyond the prune threshold. ``accuracy="fast"`` switches to the
    vectorized estimator used during index construction.
    """
    if len(family) == 0:
        raise ValueError("empty family")
    if indices is None:
        indices = list(range(len(family)))

    sites = np.stack([f.site for f in family])
    dists = np.maximum(0.0, np.linalg.norm(sites - ball.center[None, :], axis=1) - ball.radius)
    if check_separation:
        taus = np.array([f.tau for f in family])
        bad = dists / ball.diameter < 2.0 * taus
        if np.any(bad):
            offender = indices[int(np.argmax(bad))]
            raise ValueError(f"insufficient separation: site {offender}")
    lo, hi = batch_value_bounds(family, dists)
    upper = float(np.min(hi))
    screen = 2.0 * (1.0 + PRUNE_DELTA) * 1.001 * upper
    est_positions = [i for i in range(len(family)) if lo[i] <= screen]

    if accuracy == "fast":
        estimates, refined, f1_min = _tiered_fast_estimates(family, ball, lo, est_positions)
    else:
        estimates = {}
        for i in est_positions:
            estimates[i] = estimate_min_on_ball(family[i], ball, check_separation=False).value
        refined = set(estimates)
        f1_min = min(estimates.values())
    threshold = 2.0 * (1.0 + PRUNE_DELTA) * f1_min
    keep_cap = 2.0 * threshold  # unrefined upper estimates below this stay concave-safe

    kept_idx, kept_fns, pruned_idx, pruned_est = [], [], [], []
    for i, (idx, f) in enumerate(zip(indices, family)):
        est = estimates.get(i, float(lo[i]))
        if i in estimates and (est <= threshold or (i not in refined and est <= keep_cap)):
            kept_idx.append(idx)
            kept_fns.append(f)
        else:
            pruned_idx.append(idx)
            pruned_est.append(est)
    return NormalizedFamily(ball, 5.0 * f1_min, kept_idx, kept_fns, pruned_idx,
                            pruned_est, f1_min)


def _tiered_fast_estimates(family, ball, lo_bounds, est_positions):
    """Index-build estimates with minimal refinement work.

    Closed-form kinds are exact. Other kinds get one batched seed value per
    member, with Frank-Wolfe refinement spent only on members that contend
    for the family minimum or whose keep/prune call is ambiguous. Returns
    (estimates, refined-position set, family minimum).
    """
    exact_pos, fw_pos = [], []
    for i in est_positions:
        f = family[i]
        if isinstance(f, MahalanobisDistance) or (
                isinstance(f, MinkowskiDistance) and f.k == 2.0):
            exact_pos.append(i)
        else:
            fw_pos.append(i)
    estimates: dict[int, float] = {}
    refined: set[int] = set(exact_pos)
    if exact_pos:
        vals = fast_min_estimates([family[i] for i in exact_pos], ball)
        estimates.update(zip(exact_pos, vals.tolist()))
    if fw_pos:
        sub = [family[i] for i in fw_pos]
        _check_ball_in_domain(sub[0], ball)
        fam = PairedFamily(sub)
        fam.trust_domain = True
        seeds = _face_seeds(sub, ball)
        seed_vals = fam.values(seeds)
        estimates.update(zip(fw_pos, seed_vals.tolist()))

        def refine(positions):
            if not positions:
                return
            subsub = [family[i] for i in positions]
            f2 = PairedFamily(subsub)
            f2.trust_domain = True
            vals = _fast_fw_refine(f2, ball, _face_seeds(subsub, ball))
            estimates.update(zip(positions, vals.tolist()))
            refined.update(positions)

        cur_min = min(estimates.values())
        refine([i for i in fw_pos if estimates[i] <= 1.5 * cur_min])
        cur_min = min(estimates.values())
        threshold = 2.0 * (1.0 + PRUNE_DELTA) * cur_min
        # Members whose seed exceeds the concavity-safe cap but whose lower
        # bound allows a true minimum under the threshold need a real call.
        refine([i for i in fw_pos if i not in refined
                and estimates[i] > 2.0 * threshold and lo_bounds[i] <= threshold])
    return estimates, refined, min(estimates.values())


class ConvexifiedFamily:
    """Normalized members with the common concavifying offset added."""

    def __init__(self, normalized: NormalizedFamily):
        self.normalized = normalized
        self.curvature_low = CURVATURE_LOW
        self.curvature_high = CURVATURE_HIGH

    @property
    def size(self) -> int:
        return self.normalized.size

    @property
    def kept_indices(self):
        return self.normalized.kept_indices

    @staticmethod
    def offset(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return (1.0 - np.einsum("ad,ad->a", U, U)) / 8.0

    @staticmethod
    def offset_gradient(u: np.ndarray) -> np.ndarray:
        return -np.asarray(u, dtype=float) / 4.0

    def values_matrix(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.normalized.values_matrix(U) + self.offset(U)[:, None]

    def member_values(self, pos: int, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.normalized.member_values(pos, U) + self.offset(U)

    def member_gradients(self, pos: int, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.normalized.member_gradients(pos, U) - U / 4.0

    def member_hessians(self, pos: int, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        hs = self.normalized.member_hessians(pos, U)
        idx = np.arange(hs.shape[1])
        hs[:, idx, idx] -= LAMBDA_PLUS
        return hs

    def values_at_point(self, u: np.ndarray, positions) -> np.ndarray:
        """Convexified values of selected members at one normalized point."""
        fns = [self.normalized.kept_fns[p] for p in positions]
        x = self.normalized.world_points(u)
        vals = batch_values(fns, x)[0] / self.normalized.scale_h
        return vals + float(self.offset(u)[0])

    def check_invariants(self, n_samples: int = 10000, seed: int = 0) -> dict:
        """Sampled extremes of the normalized and convexified members."""
        rng = np.random.default_rng(seed)
        d = self.normalized.ball.dim
        u = rng.standard_normal((n_samples, d))
        u /= np.linalg.norm(u, axis=1)[:, None]
        radii = rng.random(n_samples) ** (1.0 / d)
        U = u * radii[:, None]
        g_vals = self.normalized.values_matrix(U)
        report = {
            "g_min": float(np.min(g_vals)),
            "g_max": float(np.max(g_vals)),
            "grad_max": 0.0,
            "hess_max": 0.0,
            "conc_eig_max": -np.inf,
            "conc_eig_min": np.inf,
            "ghat_min": np.inf,
            "ghat_max": -np.inf,
        }
        phi = self.offset(U)
        for pos in range(self.size):
            grads = self.normalized.member_gradients(pos, U)
            report["grad_max"] = max(report["grad_max"],
                                     float(np.max(np.linalg.norm(grads, axis=1))))
            hs = self.normalized.member_hessians(pos, U)
            eigs = np.linalg.eigvalsh(hs)
            report["hess_max"] = max(report["hess_max"], float(np.max(np.abs(eigs))))
            report["conc_eig_max"] = max(report["conc_eig_max"],
                                         float(np.max(eigs[:, -1] - LAMBDA_PLUS)))
            report["conc_eig_min"] = min(report["conc_eig_min"],
                                         float(np.min(eigs[:, 0] - LAMBDA_PLUS)))
            ghat = g_vals[:, pos] + phi
            report["ghat_min"] = min(report["ghat_min"], float(np.min(ghat)))
            report["ghat_max"] = max(report["ghat_max"], float(np.max(ghat)))
        return report


def convexify(nf: NormalizedFamily) -> ConvexifiedFamily:
    return ConvexifiedFamily(nf)
