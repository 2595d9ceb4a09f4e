"""Embedding-space clustering backends, cluster-count selection and the full pipeline."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from ascluster import evaluation, similarity, spectral
from ascluster.errors import AscError, ConfigError, InputError, PipelineError
from ascluster.ingest import ConstraintSets, NumericDataset, TextDataset

log = logging.getLogger(__name__)

METHODS = ("kmeans", "kmedians", "kmedoids")


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    k: int
    method: str
    objective: float
    iterations: int
    seed: int
    history: tuple[float, ...] = ()
    medoids: tuple[int, ...] | None = None

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def derive_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed from the global seed and a stage name."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stage.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _check(points, k) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise InputError("points must be an n x dim matrix with dim >= 1")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > x.shape[0]:
        raise ConfigError(f"k={k} exceeds the number of points ({x.shape[0]})")
    return x


def _canonical(labels: np.ndarray, centers: np.ndarray, k: int, medoids=None):
    """Relabel clusters in order of first appearance."""
    order = []
    for lab in labels:
        if lab not in order:
            order.append(int(lab))
            if len(order) == k:
                break
    order += [c for c in range(k) if c not in order]
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    new_medoids = tuple(int(medoids[c]) for c in order) if medoids is not None else None
    return remap[labels], centers[order], new_medoids


def _farthest_point_init(x, k, first, dist_fn):
    chosen = [first]
    nearest = dist_fn(x, x[[first]])[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, dist_fn(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _sqeuclidean(a, b):
    return cdist(a, b, "sqeuclidean")


def _cityblock(a, b):
    return cdist(a, b, "cityblock")


def _lloyd(x, centers, max_iter, dist_fn, update_fn):
    k = centers.shape[0]
    history = []
    labels = None
    for it in range(1, max_iter + 1):
        dist = dist_fn(x, centers)
        new_labels = np.argmin(dist, axis=1)
        # empty cluster: take over the point farthest from its own center
        for c in range(k):
            if not np.any(new_labels == c):
                own = dist[np.arange(len(x)), new_labels]
                sizes = np.bincount(new_labels, minlength=k)
                own = np.where(sizes[new_labels] > 1, own, -np.inf)
                far = int(np.argmax(own))
                new_labels[far] = c
                centers[c] = x[far]
        centers = np.array([update_fn(x[new_labels == c]) for c in range(k)])
        obj = float(dist_fn(x, centers)[np.arange(len(x)), new_labels].sum())
        history.append(obj)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers, history, it


def _hartigan(x, labels, centers, max_iter):
    """Single-point transfers that lower the squared error (Lloyd fixed points can still admit them)."""
    k = centers.shape[0]
    labels = labels.copy()
    centers = centers.copy()
    sizes = np.bincount(labels, minlength=k).astype(float)
    for _ in range(max_iter):
        moved = False
        for i in range(len(x)):
            a = labels[i]
            if sizes[a] <= 1:
                continue
            d = ((centers - x[i]) ** 2).sum(axis=1)
            gain = sizes / (sizes + 1.0) * d
            gain[a] = sizes[a] / (sizes[a] - 1.0) * d[a]
            b = int(np.argmin(np.where(np.arange(k) == a, np.inf, gain)))
            if gain[b] < gain[a] * (1.0 - 1e-12) - 1e-15:
                centers[a] = (sizes[a] * centers[a] - x[i]) / (sizes[a] - 1.0)
                centers[b] = (sizes[b] * centers[b] + x[i]) / (sizes[b] + 1.0)
                sizes[a] -= 1.0
                sizes[b] += 1.0
                labels[i] = b
                moved = True
        if not moved:
            break
    centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return labels, centers


def _center_based(points, k, seed, max_iter, restarts, method, dist_fn, update_fn,
                  refine=None) -> ClusterAssignment:
    x = _check(points, k)
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    n = len(x)
    rng = np.random.default_rng(seed)
    starts = rng.permutation(n)
    best = None
    for r in range(restarts):
        if r < n:
            centers = _farthest_point_init(x, k, int(starts[r]), dist_fn)
        else:
            # every start point already used: fall back to random distinct rows
            centers = x[rng.choice(n, size=k, replace=False)].copy()
        labels, centers, history, iters = _lloyd(x, centers, max_iter, dist_fn, update_fn)
        if refine is not None:
            labels, centers = refine(x, labels, centers, max_iter)
            obj = float(dist_fn(x, centers)[np.arange(n), labels].sum())
            if obj < history[-1]:
                history.append(obj)
        obj = history[-1]
        if best is None or obj < best[0]:
            best = (obj, labels, centers, history, iters)
    obj, labels, centers, history, iters = best
    labels, centers, _ = _canonical(labels, centers, k)
    return ClusterAssignment(labels, centers, k, method, obj, iters, int(seed), tuple(history))


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, restarts: int = 10) -> ClusterAssignment:
    """Lloyd iterations from farthest-point seeding, then single-point transfers.

    Best of ``restarts`` starts by squared error.
    """
    return _center_based(points, k, seed, max_iter, restarts, "kmeans",
                         _sqeuclidean, lambda pts: pts.mean(axis=0), _hartigan)


def kmedians(points, k: int, seed: int = 0, max_iter: int = 300, restarts: int = 10) -> ClusterAssignment:
    """Like :func:`kmeans` with L1 distances and coordinate-wise medians."""
    return _center_based(points, k, seed, max_iter, restarts, "kmedians",
                         _cityblock, lambda pts: np.median(pts, axis=0))


def _medoid_cost(dist, medoids):
    return float(dist[:, medoids].min(axis=1).sum())


def best_swap(dist: np.ndarray, medoids) -> tuple[float, int, int]:
    """Best single (medoid position, replacement point) swap and its cost.

    Evaluates every medoid against every non-medoid point; ties go to the
    lowest (position, point) pair.
    """
    n = dist.shape[0]
    medoids = list(medoids)
    k = len(medoids)
    md = dist[:, medoids]                          # n x k
    order = np.argsort(md, axis=1, kind="stable")
    nearest_pos = order[:, 0]
    d1 = md[np.arange(n), nearest_pos]
    d2 = md[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
    is_medoid = np.zeros(n, dtype=bool)
    is_medoid[medoids] = True
    best = (np.inf, -1, -1)
    for pos in range(k):
        # cost of every point i if medoid ``pos`` is replaced by candidate o (columns)
        keep = np.where(nearest_pos == pos, d2, d1)
        cost = np.minimum(keep[:, None], dist).sum(axis=0)
        cost[is_medoid] = np.inf
        o = int(np.argmin(cost))
        if cost[o] < best[0]:
            best = (float(cost[o]), pos, o)
    return best


def kmedoids_hill_climb(points, k: int, seed: int = 0, max_iter: int = 1000) -> ClusterAssignment:
    """Best-improvement single-swap search over medoid sets (Euclidean distances)."""
    x = _check(points, k)
    n = len(x)
    dist = cdist(x, x, "euclidean")
    rng = np.random.default_rng(seed)
    medoids = [int(i) for i in rng.choice(n, size=k, replace=False)]
    cost = _medoid_cost(dist, medoids)
    history = [cost]
    it = 0
    while it < max_iter and k < n:
        new_cost, pos, o = best_swap(dist, medoids)
        if not new_cost < cost - 1e-12 * max(1.0, cost):
            break
        medoids[pos] = o
        cost = new_cost
        history.append(cost)
        it += 1
    labels = np.argmin(dist[:, medoids], axis=1)
    # duplicate rows could leave a medoid without members
    labels[medoids] = np.arange(k)
    cost = float(dist[np.arange(n), np.asarray(medoids)[labels]].sum())
    labels, centers, medoids_t = _canonical(labels, x[medoids], k, medoids)
    return ClusterAssignment(labels, centers, k, "kmedoids", cost, it, int(seed),
                             tuple(history), medoids_t)


def cluster_points(points, k: int, method: str = "kmeans", seed: int = 0,
                   restarts: int = 10, max_iter: int = 300) -> ClusterAssignment:
    if method == "kmeans":
        return kmeans(points, k, seed, max_iter, restarts)
    if method == "kmedians":
        return kmedians(points, k, seed, max_iter, restarts)
    if method == "kmedoids":
        return kmedoids_hill_climb(points, k, seed, max(max_iter, 1000))
    raise ConfigError(f"unknown clustering method {method!r}")


# --------------------------------------------------------------------------
# cluster-count selection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateScore:
    k: int
    gap: float
    silhouette: float
    score: float
    degenerate: bool


@dataclass(frozen=True)
class KSelectionReport:
    candidates: tuple[int, ...]
    per_candidate: tuple[CandidateScore, ...]
    chosen_k: int
    mode: str
    degenerate: bool = False


def literal_k_score(points, labels, centers, gap: float) -> float:
    """max over clusters of gap + |A_i - C_i| / max(A_i, C_i).

    A_i: mean pairwise distance inside cluster i; C_i: distance from center i to
    the nearest other center.
    """
    labels = np.asarray(labels)
    k = centers.shape[0]
    cc = cdist(centers, centers)
    np.fill_diagonal(cc, np.inf)
    terms = []
    for c in range(k):
        members = points[labels == c]
        m = len(members)
        a = float(cdist(members, members).sum() / (m * (m - 1))) if m > 1 else 0.0
        b = float(cc[c].min()) if k > 1 else 0.0
        denom = max(a, b)
        terms.append(gap + (abs(a - b) / denom if denom > 0 else 0.0))
    return max(terms)


def _is_degenerate(assign: ClusterAssignment) -> bool:
    # singleton-dominated: at least half of the clusters hold a single point
    return int(np.sum(assign.sizes == 1)) * 2 >= assign.k


def select_k(dec: spectral.SpectralDecomposition, gaps: spectral.EigengapReport,
             method: str = "kmeans", seed: int = 0, *, restarts: int = 10,
             literal: bool = False, normalize_rows: bool = False):
    """Cluster the embedding for each eigengap candidate and keep the best k.

    Default score: gap(k) / max window gap + mean silhouette, maximized. With
    ``literal`` the per-cluster gap/separation expression of
    :func:`literal_k_score` is minimized instead. A candidate k is clustered on
    eigenvectors e_2 .. e_k. Returns ``(report, assignment, embedding)``.
    """
    if not gaps.candidates:
        raise ConfigError("no eigengap candidates to evaluate")
    max_gap = float(gaps.gaps.max()) if len(gaps.gaps) else 0.0
    rows, fits = [], {}
    for k in gaps.candidates:
        if k > dec.count or k > dec.eigenvectors.shape[0]:
            raise ConfigError(f"candidate k={k} exceeds retained eigenpairs")
        emb = spectral.spectral_embedding(dec, max(1, k - 1), normalize_rows)
        assign = cluster_points(emb.coordinates, k, method, derive_seed(seed, f"select_k/{k}"), restarts)
        gap = gaps.gap_for(k)
        sil = evaluation.silhouette(emb.coordinates, assign.labels)[1]
        if literal:
            score = literal_k_score(emb.coordinates, assign.labels, assign.centers, gap)
        else:
            score = (gap / max_gap if max_gap > 0 else 0.0) + sil
        degenerate = _is_degenerate(assign)
        rows.append(CandidateScore(k, gap, sil, score, degenerate))
        fits[k] = (assign, emb)

    usable = [r for r in rows if not r.degenerate]
    all_degenerate = not usable
    if all_degenerate:
        chosen = max(rows, key=lambda r: (r.gap, -r.k)).k
        log.warning("every candidate clustering is singleton-dominated; falling back to k=%d", chosen)
    elif literal:
        chosen = min(usable, key=lambda r: (r.score, r.k)).k
    else:
        chosen = min(usable, key=lambda r: (-r.score, r.k)).k
    report = KSelectionReport(tuple(gaps.candidates), tuple(rows), chosen,
                              "literal" if literal else "gap+silhouette", all_degenerate)
    assign, emb = fits[chosen]
    return report, assign, emb


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

MODALITIES = ("fused", "numeric", "text")


@dataclass
class AscConfig:
    lam: float | str = "optimize"
    lambda_step: float = 0.05
    laplacian: str = "random_walk"
    window: int = 20
    method: str = "kmeans"
    restarts: int = 10
    seed: int = 0
    rescale: bool = True
    eq7_literal: bool = False
    eq10_literal: bool = False
    max_triples: int = 10_000
    modality: str = "fused"
    normalize_rows: bool = False
    candidates: tuple[int, ...] | None = None
    metrics_space: str = "embedding"

    def check(self) -> "AscConfig":
        if self.lam != "optimize":
            try:
                lam = float(self.lam)
            except (TypeError, ValueError):
                raise ConfigError(f"lambda must be a number in [0, 1] or 'optimize', got {self.lam!r}") from None
            if not 0.0 <= lam <= 1.0:
                raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
            self.lam = lam
        similarity.lambda_grid(self.lambda_step)
        if self.laplacian not in spectral.LAPLACIAN_KINDS:
            raise ConfigError(f"unknown Laplacian kind {self.laplacian!r}")
        if self.window < 3:
            raise ConfigError("window must be >= 3")
        if self.method not in METHODS:
            raise ConfigError(f"unknown clustering method {self.method!r}")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        if self.metrics_space not in ("embedding", "numeric"):
            raise ConfigError(f"metrics space must be 'embedding' or 'numeric', got {self.metrics_space!r}")
        if self.max_triples < 1:
            raise ConfigError("max_triples must be >= 1")
        if self.candidates is not None:
            self.candidates = tuple(int(k) for k in self.candidates)
            if not self.candidates or min(self.candidates) < 2:
                raise ConfigError("explicit candidates must be integers >= 2")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["candidates"] is not None:
            d["candidates"] = list(d["candidates"])
        return d


@dataclass
class AscResult:
    assignment: ClusterAssignment
    selection: KSelectionReport
    lambda_solution: similarity.LambdaSolution | None
    lam: float | None
    affinity: np.ndarray
    decomposition: spectral.SpectralDecomposition
    eigengap: spectral.EigengapReport
    embedding: spectral.Embedding
    metrics: evaluation.MetricBundle | None
    modality: str
    samples: tuple[str, ...] = field(default_factory=tuple)

    @property
    def labels(self) -> np.ndarray:
        return self.assignment.labels

    @property
    def k(self) -> int:
        return self.assignment.k


def _stage(step: int, name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except AscError as exc:
        raise PipelineError(step, name, exc) from exc
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise PipelineError(step, name, exc) from exc


def _decompose(w: np.ndarray, cfg: AscConfig) -> spectral.SpectralDecomposition:
    n = w.shape[0]
    count = min(n, cfg.window + 16)
    dec = spectral.spectral_decomposition(w, cfg.laplacian, count)
    if dec.zero_multiplicity + cfg.window > count and count < n:
        dec = spectral.spectral_decomposition(w, cfg.laplacian, n)
    return dec


def _similarities(numeric, text, cfg: AscConfig):
    if numeric is None and cfg.modality in ("fused", "numeric"):
        raise ConfigError(f"modality {cfg.modality!r} needs numeric data")
    if text is None and cfg.modality in ("fused", "text"):
        raise ConfigError(f"modality {cfg.modality!r} needs text data")
    if numeric is not None and text is not None:
        text = _stage(0, "align", text.reorder, numeric.samples)
    samples = numeric.samples if numeric is not None else text.samples
    if len(samples) < 3:
        raise InputError("need at least 3 samples")

    num_sim = txt_sim = None
    if numeric is not None and cfg.modality in ("fused", "numeric"):
        num_sim = _stage(1, "numeric similarity", similarity.numeric_similarity_matrix, numeric)
        if cfg.rescale:
            num_sim = similarity.rescale_similarity(num_sim)
    if text is not None and cfg.modality in ("fused", "text"):
        txt_sim = _stage(2, "text similarity", similarity.text_similarity_matrix, text)
    return samples, num_sim, txt_sim


def _optimize(num_sim, txt_sim, constraints, cfg: AscConfig) -> similarity.LambdaSolution:
    if constraints is None:
        raise ConfigError("lambda optimization needs constraint sets (or a fixed lambda)")
    return _stage(3, "lambda optimization", similarity.optimize_lambda,
                  num_sim, txt_sim, constraints, cfg.lambda_step,
                  max_triples=cfg.max_triples, seed=derive_seed(cfg.seed, "triples"),
                  literal_rhs=cfg.eq7_literal)


def lambda_search(numeric: NumericDataset, text: TextDataset, constraints: ConstraintSets,
                  config: AscConfig | None = None) -> similarity.LambdaSolution:
    """Only the fusion-weight grid search of :func:`run_asc`."""
    cfg = replace(config or AscConfig(), modality="fused").check()
    _, num_sim, txt_sim = _similarities(numeric, text, cfg)
    return _optimize(num_sim, txt_sim, constraints, cfg)


def run_asc(numeric: NumericDataset | None, text: TextDataset | None,
            constraints: ConstraintSets | None = None, config: AscConfig | None = None) -> AscResult:
    """Similarities, fusion weight, Laplacian spectrum, candidate k loop, final clustering.

    ``config.modality`` restricts the graph to one modality ("numeric" or
    "text"); ``config.lam`` fixes the fusion weight instead of optimizing it.
    Constraints given together with a fixed weight still produce the grid
    diagnostics.
    """
    cfg = (config or AscConfig()).check()
    samples, num_sim, txt_sim = _similarities(numeric, text, cfg)

    solution = None
    if cfg.modality == "fused":
        if cfg.lam == "optimize" or constraints is not None:
            solution = _optimize(num_sim, txt_sim, constraints, cfg)
        lam = solution.lam if cfg.lam == "optimize" else float(cfg.lam)
        w = _stage(4, "fused similarity", similarity.fuse_similarity, num_sim, txt_sim, lam).values
    elif cfg.modality == "numeric":
        lam, w = None, num_sim.values
    else:
        lam, w = None, txt_sim.values
    w = similarity.without_self_loops(w)

    dec = _stage(6, "eigendecomposition", _decompose, w, cfg)
    if cfg.candidates is not None:
        report = _stage(6, "eigengap", spectral.eigengap_candidates, dec, min(cfg.window, dec.count - dec.zero_multiplicity))
        report = spectral.EigengapReport(report.eigenvalues, report.gaps, tuple(sorted(set(cfg.candidates))),
                                         report.window, report.offset, report.threshold, False)
    else:
        window = min(cfg.window, dec.count - dec.zero_multiplicity)
        report = _stage(6, "eigengap", spectral.eigengap_candidates, dec, window)
    selection, assign, emb = _stage(9, "k selection", select_k, dec, report, cfg.method, cfg.seed,
                                    restarts=cfg.restarts, literal=cfg.eq10_literal,
                                    normalize_rows=cfg.normalize_rows)
    metrics = None
    if assign.k >= 2:
        if cfg.metrics_space == "numeric":
            if numeric is None:
                raise ConfigError("numeric-space metrics need numeric data")
            metrics = _stage(10, "metrics", evaluation.metric_bundle, numeric.values, assign.labels)
        else:
            metrics = _stage(10, "metrics", evaluation.metric_bundle, emb.coordinates, assign.labels,
                             assign.centers)
    return AscResult(assign, selection, solution, lam, w, dec, report, emb, metrics, cfg.modality, samples)
