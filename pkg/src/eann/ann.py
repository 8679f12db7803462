"""End-to-end approximate nearest-neighbor indices.

Two pipelines share the decomposition tree: scaling (gauge) families use
alpha = 2*tau and beta = 10*tau/eps, answering inner-cluster queries through
boundary patches of a hypercube around the cluster ball's center with the
sites perturbed to that center; Bregman families use alpha = 2*tau and
beta = 4*tau^2/eps, collapsing inner clusters to a single representative.

Every structure only nominates candidate sites; the query always re-evaluates
the true distances of the candidates and returns the best, so the internal
approximations surface as a single checkable (1+eps) inequality.

Per-leaf structures are built on first use and memoized (they are pure
functions of the leaf), so results do not depend on query order.
"""

from __future__ import annotations

import struct
import threading
from collections import Counter

import numpy as np

from ._batch import batch_values
from .avd import _LEAF, _PENDING, AvdConfig, AvdLeaf, AvdTree, build_avd
from .distances import (
    BUILTIN_BREGMAN,
    BregmanDistance,
    DomainError,
    MahalanobisDistance,
    MinkowskiDistance,
    SiteFunction,
    squared_mahalanobis_spec,
)
from .envelope import RelativeAvr, build_relative
from .geom import EuclideanBall, enclosing_ball

MAGIC = b"EANN"
FORMAT_VERSION = 1


def ray_to_hypercube_boundary(p_prime, q) -> np.ndarray:
    """Exit point of the ray p' -> q on the side-2 hypercube centered at p'."""
    p_prime = np.asarray(p_prime, dtype=float)
    q = np.asarray(q, dtype=float)
    rel = q - p_prime
    m = float(np.max(np.abs(rel)))
    if m == 0.0:
        raise ValueError("query equals patch center")
    return p_prime + rel / m


class InnerPatchSet:
    """Per-leaf machinery for a tightly clustered scaling family.

    The cluster's functions are re-sited to the ball center p'; since the
    perturbed functions are 1-homogeneous about p', the answer is constant
    along rays from p', so queries are deflected to the boundary of a side-2
    hypercube around p', which is covered by patches each carrying its own
    relative envelope at error eps/3.
    """

    def __init__(self, fns: list[SiteFunction], indices: list[int],
                 p_prime: np.ndarray, tau: float, eps: float):
        self.p_prime = np.asarray(p_prime, dtype=float)
        self.indices = list(indices)
        self.perturbed = [f.resite(self.p_prime) for f in fns]
        self.tau = float(tau)
        self.eps = float(eps)
        self.side = 1.0 / (2.0 * self.tau + 1.0)  # patch diameter
        d = self.p_prime.size
        if d >= 2:
            self.face_side = self.side / np.sqrt(d - 1)
            self.cells_per_axis = int(np.ceil(2.0 / self.face_side))
        else:
            self.face_side = 2.0
            self.cells_per_axis = 1
        self._patches: dict[tuple, RelativeAvr] = {}
        self._lock = threading.Lock()

    def patch_key(self, q_prime: np.ndarray) -> tuple:
        rel = q_prime - self.p_prime
        axis = int(np.argmax(np.abs(rel)))
        positive = rel[axis] > 0
        grid = []
        for j in range(rel.size):
            if j == axis:
                continue
            idx = int(np.floor((rel[j] + 1.0) / self.face_side))
            grid.append(min(max(idx, 0), self.cells_per_axis - 1))
        return (axis, positive, tuple(grid))

    def patch_ball(self, key: tuple) -> EuclideanBall:
        axis, positive, grid = key
        center = self.p_prime.copy()
        center[axis] += 1.0 if positive else -1.0
        g = iter(grid)
        for j in range(center.size):
            if j == axis:
                continue
            center[j] += -1.0 + (next(g) + 0.5) * self.face_side
        return EuclideanBall(center, self.side / 2.0)

    def patch_count(self) -> int:
        d = self.p_prime.size
        return 2 * d * self.cells_per_axis ** (d - 1)

    def _patch(self, key: tuple) -> RelativeAvr:
        avr = self._patches.get(key)
        if avr is None:
            with self._lock:
                avr = self._patches.get(key)
                if avr is None:
                    avr = build_relative(self.perturbed, self.patch_ball(key),
                                         self.eps / 3.0, indices=self.indices,
                                         accuracy="fast")
                    self._patches[key] = avr
        return avr

    def query(self, q: np.ndarray) -> int:
        """Candidate original function id for a query anywhere off p'."""
        q_prime = ray_to_hypercube_boundary(self.p_prime, q)
        _, witness = self._patch(self.patch_key(q_prime)).query(q_prime)
        return witness

    @property
    def sample_count(self) -> int:
        return sum(p.sample_count for p in self._patches.values())


class _Attachment:
    __slots__ = ("single_fids", "inner_fids", "outer_fids", "outer_avr",
                 "patchset", "inner_rep", "brute")

    def __init__(self):
        self.single_fids: list[int] = []
        self.inner_fids: list[int] = []
        self.outer_fids: list[int] = []
        self.outer_avr: RelativeAvr | None = None
        self.patchset: InnerPatchSet | None = None
        self.inner_rep: int | None = None
        self.brute = False


def brute_force(sites: list[SiteFunction], q) -> tuple[int, float]:
    """Exact argmin/min by full scan; ties go to the lowest index."""
    vals = batch_values(sites, q)[0]
    idx = int(np.argmin(vals))
    return idx, float(vals[idx])


class AnnIndex:
    """Approximate nearest-neighbor index over a uniform-kind family."""

    def __init__(self, sites: list[SiteFunction], eps: float, kind: str | None = None):
        if len(sites) == 0:
            raise ValueError("no sites")
        if not (0.0 < eps <= 1.0):
            raise ValueError("eps out of range")
        kinds = {("bregman" if isinstance(f, BregmanDistance) else "scaling") for f in sites}
        if len(kinds) != 1:
            raise ValueError("mixed kinds")
        inferred = kinds.pop()
        if kind is not None and kind != inferred:
            raise ValueError("mixed kinds")
        self.kind = inferred
        if self.kind == "bregman":
            spec0 = sites[0].spec
            for f in sites[1:]:
                if f.spec is not spec0 and not _same_bregman_spec(f.spec, spec0):
                    raise ValueError("bregman sites must share one generator")
        dims = {f.dim for f in sites}
        if len(dims) != 1:
            raise ValueError("sites must share one dimension")
        self.sites = list(sites)
        self.eps = float(eps)
        tau = max(f.tau for f in sites)
        if not np.isfinite(tau):
            raise ValueError("admissibility gate: unbounded ratio")
        self.tau = max(1.0, float(tau))
        self.alpha = 2.0 * self.tau
        if self.kind == "scaling":
            self.beta = 10.0 * self.tau / self.eps
        else:
            self.beta = 4.0 * self.tau**2 / self.eps
        self.points = np.stack([f.site for f in sites])
        self.tree = build_avd(self.points, AvdConfig(self.alpha, self.beta))
        self._lock = threading.RLock()
        self.stats = Counter()
        c = self.points.mean(axis=0)
        r = float(np.max(np.linalg.norm(self.points - c[None, :], axis=1))) * (1.0 + 1e-9)
        self._site_ball = EuclideanBall(c, r)
        self._outside_patchset: InnerPatchSet | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return len(self.sites)

    def _bump(self, key: str, amount: int = 1) -> None:
        with self._lock:
            self.stats[key] += amount

    # -- per-leaf structures ------------------------------------------------

    def _fids_of_positions(self, positions) -> list[int]:
        out: list[int] = []
        for pos in positions:
            out.extend(self.tree.site_groups[pos].tolist())
        return sorted(out)

    def _attachment(self, leaf: AvdLeaf) -> _Attachment:
        att = leaf.attachment
        if att is not None:
            return att
        with self._lock:
            att = leaf.attachment
            if att is not None:
                return att
            att = _Attachment()
            att.single_fids = self._fids_of_positions(leaf.in_cell)
            att.inner_fids = self._fids_of_positions(leaf.inner)
            att.outer_fids = self._fids_of_positions(leaf.outer_positions())
            if att.outer_fids:
                try:
                    att.outer_avr = build_relative(
                        [self.sites[i] for i in att.outer_fids],
                        enclosing_ball(leaf.cell), self.eps,
                        indices=att.outer_fids, accuracy="fast")
                except DomainError:
                    att.brute = True
                    self.stats["brute_leaves"] += 1
            if att.inner_fids:
                if self.kind == "scaling":
                    att.patchset = InnerPatchSet(
                        [self.sites[i] for i in att.inner_fids], att.inner_fids,
                        leaf.inner_ball.center, self.tau, self.eps)
                else:
                    att.inner_rep = att.inner_fids[0]
            leaf.attachment = att
            return att

    # -- queries --------------------------------------------------------------

    def query(self, q) -> tuple[int, float]:
        """(site index, value) with value <= (1+eps) * min_i f_i(q)."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError("query dimension mismatch")
        if not np.all(np.isfinite(q)):
            raise ValueError("query must be finite")
        if self.kind == "bregman" and not bool(self.sites[0].in_domain(q)):
            raise DomainError("query outside domain")
        self._bump("queries")
        leaf, visits = self.tree.locate(q)
        self._bump("locate_visits", visits)
        if leaf is None:
            return self._query_outside(q)
        att = self._attachment(leaf)
        if att.brute:
            self._bump("brute_queries")
            return brute_force(self.sites, q)
        candidates: list[int] = list(att.single_fids)
        try:
            if att.outer_avr is not None:
                _, w = att.outer_avr.query(q)
                candidates.append(w)
            if att.patchset is not None:
                if np.all(q == att.patchset.p_prime):
                    candidates.append(att.inner_fids[0])
                else:
                    candidates.append(att.patchset.query(q))
            elif att.inner_rep is not None:
                candidates.append(att.inner_rep)
        except DomainError:
            with self._lock:
                att.brute = True
                self.stats["brute_queries"] += 1
                self.stats["brute_leaves"] += 1
            return brute_force(self.sites, q)
        assert candidates, "leaf produced no candidates"
        candidates = sorted(set(candidates))
        vals = batch_values([self.sites[i] for i in candidates], q)[0]
        best = int(np.argmin(vals))
        return candidates[best], float(vals[best])

    def _query_outside(self, q: np.ndarray) -> tuple[int, float]:
        self._bump("outside_queries")
        ball = self._site_ball
        gap = float(np.linalg.norm(q - ball.center)) - ball.radius
        if gap < self.beta * ball.diameter:
            self._bump("outside_brute")
            return brute_force(self.sites, q)
        if self.kind == "bregman":
            candidates = [0]
        else:
            with self._lock:
                if self._outside_patchset is None:
                    self._outside_patchset = InnerPatchSet(
                        self.sites, list(range(self.n)), ball.center, self.tau, self.eps)
            if np.all(q == ball.center):
                candidates = [0]
            else:
                candidates = [self._outside_patchset.query(q)]
        vals = batch_values([self.sites[i] for i in candidates], q)[0]
        best = int(np.argmin(vals))
        return candidates[best], float(vals[best])

    # -- statistics -----------------------------------------------------------

    def storage_stats(self, materialize: bool = False) -> dict:
        """Structure sizes. With ``materialize`` the whole tree is expanded
        (envelope samples still count only what queries touched)."""
        if materialize:
            self.tree.materialize()
        env_samples = 0
        patches = 0
        stack = [self.tree._root]
        leaf_count = 0
        while stack:
            node = stack.pop()
            if node.kind == _LEAF:
                leaf_count += 1
                att = node.leaf.attachment
                if att is not None:
                    if att.outer_avr is not None:
                        env_samples += att.outer_avr.sample_count
                    if att.patchset is not None:
                        env_samples += att.patchset.sample_count
                        patches += len(att.patchset._patches)
            elif node.kind != _PENDING:
                stack.extend(c for c in node.children if c is not None)
        return {
            "leaves": leaf_count,
            "envelope_samples": env_samples,
            "patches": patches,
            "tree_expansions": self.tree._expansions,
        }


def _same_bregman_spec(a, b) -> bool:
    return (a.name == b.name and a.dim == b.dim
            and np.array_equal(a.domain_low, b.domain_low)
            and np.array_equal(a.domain_high, b.domain_high)
            and ((a.matrix is None) == (b.matrix is None))
            and (a.matrix is None or np.array_equal(a.matrix, b.matrix)))


def build_index(sites: list[SiteFunction], eps: float, kind: str | None = None) -> AnnIndex:
    return AnnIndex(sites, eps, kind=kind)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_KIND_CODE = {"scaling": 0, "bregman": 1}
_FAMILY_CODE = {"minkowski": 0, "mahalanobis": 1, "bregman": 2}


def save_index(index: AnnIndex, path: str) -> int:
    """Write the index to a single binary file; returns bytes written.

    Envelope attachments are rebuilt on demand after loading (they are pure
    functions of the stored sites and tree), so the attachment section
    carries a zero blob count.
    """
    fns = index.sites
    fam = fns[0].kind
    if fam == "gauge":
        raise ValueError("custom gauge functions are not serializable")
    n, d = index.n, index.dim
    out = [MAGIC, struct.pack("<HBII", FORMAT_VERSION, _KIND_CODE[index.kind], d, n)]
    out.append(struct.pack("<dddd", index.eps, index.tau, index.alpha, index.beta))
    out.append(struct.pack("<B", _FAMILY_CODE[fam]))
    if fam == "minkowski":
        out.append(np.array([f.k for f in fns], dtype="<f8").tobytes())
        out.append(np.array([f.weight for f in fns], dtype="<f8").tobytes())
    elif fam == "mahalanobis":
        out.append(np.stack([f.matrix for f in fns]).astype("<f8").tobytes())
    else:
        spec = fns[0].spec
        name = spec.name.encode()
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(np.asarray(spec.domain_low, dtype="<f8").tobytes())
        out.append(np.asarray(spec.domain_high, dtype="<f8").tobytes())
        out.append(struct.pack("<B", spec.matrix is not None))
        if spec.matrix is not None:
            out.append(np.asarray(spec.matrix, dtype="<f8").tobytes())
    out.append(index.points.astype("<f8").tobytes())
    out.append(np.array([f.tau for f in fns], dtype="<f8").tobytes())
    tree_blob = index.tree.to_bytes()
    out.append(struct.pack("<I", len(tree_blob)))
    out.append(tree_blob)
    out.append(struct.pack("<I", 0))  # attachment blobs: rebuilt lazily
    blob = b"".join(out)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_index(path: str) -> AnnIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("not an index file")
    off = 4
    version, kind_code, d, n = struct.unpack_from("<HBII", blob, off)
    off += struct.calcsize("<HBII")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    eps, tau, alpha, beta = struct.unpack_from("<dddd", blob, off)
    off += 32
    (fam_code,) = struct.unpack_from("<B", blob, off)
    off += 1
    if fam_code == 0:
        ks = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        ws = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        params = ("minkowski", ks.copy(), ws.copy())
    elif fam_code == 1:
        mats = np.frombuffer(blob, dtype="<f8", count=n * d * d, offset=off).reshape(n, d, d)
        off += 8 * n * d * d
        params = ("mahalanobis", mats.copy())
    else:
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode()
        off += name_len
        lo = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        hi = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        (has_mat,) = struct.unpack_from("<B", blob, off)
        off += 1
        mat = None
        if has_mat:
            mat = np.frombuffer(blob, dtype="<f8", count=d * d, offset=off).reshape(d, d).copy()
            off += 8 * d * d
        params = ("bregman", name, lo, hi, mat)
    points = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
    off += 8 * n * d
    taus = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    (tree_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    tree_blob = blob[off : off + tree_len]
    off += tree_len

    fns: list[SiteFunction] = []
    if params[0] == "minkowski":
        _, ks, ws = params
        fns = [MinkowskiDistance(points[i], float(ks[i]), float(ws[i]), tau=float(taus[i]))
               for i in range(n)]
    elif params[0] == "mahalanobis":
        _, mats = params
        fns = [MahalanobisDistance(points[i], mats[i], tau=float(taus[i])) for i in range(n)]
    else:
        _, name, lo, hi, mat = params
        if name == "squared-mahalanobis":
            spec = squared_mahalanobis_spec(mat, lo, hi)
        elif name == "squared-euclidean":
            spec = BUILTIN_BREGMAN[name](d)
        else:
            spec = BUILTIN_BREGMAN[name](d, lo, hi)
        fns = [BregmanDistance(spec, points[i], tau=float(taus[i])) for i in range(n)]

    index = AnnIndex.__new__(AnnIndex)
    index.kind = "scaling" if kind_code == 0 else "bregman"
    index.sites = fns
    index.eps = float(eps)
    index.tau = float(tau)
    index.alpha = float(alpha)
    index.beta = float(beta)
    index.points = points
    cfg = AvdConfig(index.alpha, index.beta)
    base = build_avd(points, cfg)
    index.tree = AvdTree.from_bytes(tree_blob, base.positions, base.site_groups, cfg)
    index.tree.position_of_site = base.position_of_site
    index._lock = threading.RLock()
    index.stats = Counter()
    c = points.mean(axis=0)
    r = float(np.max(np.linalg.norm(points - c[None, :], axis=1))) * (1.0 + 1e-9)
    index._site_ball = EuclideanBall(c, r)
    index._outside_patchset = None
    return index
