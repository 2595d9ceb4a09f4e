"""Numeric, text and fused similarity matrices and the constrained fusion weight."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ascluster.errors import ConfigError, DegenerateError, InputError, NumericalError
from ascluster.ingest import ConstraintSets, NumericDataset, TextDataset

KINDS = ("numeric", "text", "fused")


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    kind: str
    lam: float | None = None

    def __post_init__(self):
        w = np.asarray(self.values, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InputError(f"similarity matrix must be square, got {w.shape}")
        if self.kind not in KINDS:
            raise InputError(f"unknown similarity kind {self.kind!r}")
        if (self.lam is None) != (self.kind != "fused"):
            raise InputError("lam must be given exactly for fused matrices")
        if not np.all(np.isfinite(w)):
            raise NumericalError("similarity matrix has non-finite entries")
        if np.any(w < 0):
            raise NumericalError("similarity matrix has negative entries")
        if np.max(np.abs(w - w.T), initial=0.0) > 1e-12:
            raise NumericalError("similarity matrix is not symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "values", w)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CovarianceModel:
    sigma: np.ndarray
    sigma_inv: np.ndarray
    rank: int
    # whitening map: Euclidean distance of x @ whiten equals Mahalanobis distance
    whiten: np.ndarray


def covariance_model(data: NumericDataset | np.ndarray) -> CovarianceModel:
    """Sample covariance (n-1 divisor) with an eigen-based pseudo-inverse."""
    x = data.values if isinstance(data, NumericDataset) else np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("covariance needs at least 2 samples")
    sigma = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    sigma = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sigma)
    top = float(evals.max(initial=0.0))
    if top <= 0.0:
        raise DegenerateError("all features are constant: covariance is zero, Mahalanobis undefined")
    keep = evals > top * max(sigma.shape) * np.finfo(float).eps
    v = evecs[:, keep]
    s = evals[keep]
    sigma_inv = (v / s) @ v.T
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    whiten = v / np.sqrt(s)
    return CovarianceModel(sigma, sigma_inv, int(keep.sum()), whiten)


def mahalanobis(x_i, x_j, model: CovarianceModel) -> float:
    diff = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    if diff.shape != (model.sigma.shape[0],):
        raise InputError(f"vector dimension {diff.shape} does not match covariance {model.sigma.shape}")
    quad = float(diff @ model.sigma_inv @ diff)
    if quad < -1e-10:
        raise NumericalError(f"negative quadratic form {quad}: broken pseudo-inverse")
    return float(np.sqrt(max(quad, 0.0)))


def mahalanobis_matrix(data: NumericDataset | np.ndarray, model: CovarianceModel | None = None) -> np.ndarray:
    """All pairwise Mahalanobis distances, computed as Euclidean distances in whitened space."""
    x = data.values if isinstance(data, NumericDataset) else np.asarray(data, dtype=float)
    if model is None:
        model = covariance_model(x)
    z = x @ model.whiten
    return squareform(pdist(z, "euclidean"))


def numeric_similarity_matrix(data: NumericDataset | np.ndarray) -> SimilarityMatrix:
    """maxMaha / Maha(x_i, x_j); zero diagonal; duplicate rows capped at maxMaha / (smallest non-zero distance)."""
    x = data.values if isinstance(data, NumericDataset) else np.asarray(data, dtype=float)
    if x.shape[0] < 2:
        raise InputError("numeric similarity needs at least 2 samples")
    dist = mahalanobis_matrix(x)
    n = dist.shape[0]
    off = ~np.eye(n, dtype=bool)
    positive = dist[off & (dist > 0)]
    if positive.size == 0:
        raise DegenerateError("all samples coincide: no non-zero Mahalanobis distance")
    max_d = float(positive.max())
    eps = float(positive.min())
    safe = np.where(dist > 0, dist, eps)
    sim = max_d / safe
    np.fill_diagonal(sim, 0.0)
    sim = 0.5 * (sim + sim.T)
    return SimilarityMatrix(sim, "numeric")


def rescale_similarity(sim: SimilarityMatrix) -> SimilarityMatrix:
    """Min-max rescale the off-diagonal entries to [0, 1]; the diagonal becomes 0."""
    w = np.array(sim.values)
    n = w.shape[0]
    off = ~np.eye(n, dtype=bool)
    if n < 2:
        return SimilarityMatrix(np.zeros_like(w), sim.kind, sim.lam)
    lo, hi = float(w[off].min()), float(w[off].max())
    out = np.zeros_like(w)
    if hi > lo:
        out[off] = (w[off] - lo) / (hi - lo)
    else:
        out[off] = 1.0
    return SimilarityMatrix(out, sim.kind, sim.lam)


def inverse_document_frequency(text: TextDataset | np.ndarray) -> np.ndarray:
    """Natural-log idf per term: log(#documents / #documents containing the term).

    Terms that occur in no document get weight 0.
    """
    counts = text.counts if isinstance(text, TextDataset) else np.asarray(text)
    if counts.ndim != 2 or counts.shape[1] < 1:
        raise InputError("empty lexicon")
    n_docs = counts.shape[0]
    df = np.count_nonzero(counts > 0, axis=0)
    idf = np.zeros(counts.shape[1])
    seen = df > 0
    idf[seen] = np.log(n_docs / df[seen])
    return idf


def tfidf_weights(text: TextDataset | np.ndarray) -> np.ndarray:
    counts = text.counts if isinstance(text, TextDataset) else np.asarray(text)
    return np.log1p(counts.astype(float)) * inverse_document_frequency(counts)


def text_similarity_matrix(text: TextDataset | np.ndarray) -> SimilarityMatrix:
    """Cosine similarity of damped tf-idf rows; all-zero rows are similar to nothing."""
    h = tfidf_weights(text)
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    nz = norms > 0
    unit = np.zeros_like(h)
    unit[nz] = h[nz] / norms[nz, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.clip(sim, 0.0, 1.0, out=sim)
    diag = np.where(nz, 1.0, 0.0)
    np.fill_diagonal(sim, diag)
    return SimilarityMatrix(sim, "text")


def fuse_similarity(numeric: SimilarityMatrix, text: SimilarityMatrix, lam: float) -> SimilarityMatrix:
    if numeric.values.shape != text.values.shape:
        raise InputError(f"shape mismatch: {numeric.values.shape} vs {text.values.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    w = lam * numeric.values + (1.0 - lam) * text.values
    return SimilarityMatrix(w, "fused", float(lam))


def without_self_loops(w: np.ndarray) -> np.ndarray:
    out = np.array(w, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


# --------------------------------------------------------------------------
# fusion weight
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaGridRow:
    lam: float
    feasible: bool
    satisfied_fraction: float
    mean_must_link: float
    mean_cannot_link: float


@dataclass(frozen=True)
class LambdaSolution:
    lam: float
    objective: float
    satisfied_fraction: float
    feasible: bool
    grid: tuple[LambdaGridRow, ...]
    n_triples: int


def lambda_grid(step: float) -> np.ndarray:
    if not 0 < step <= 1:
        raise ConfigError(f"lambda step must be in (0, 1], got {step}")
    count = round(1.0 / step)
    if abs(count * step - 1.0) > 1e-9:
        raise ConfigError(f"lambda step {step} does not divide 1 evenly")
    return np.arange(count + 1) / count


def _unrank_pairs(ranks: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Map lexicographic ranks of (a < b) pairs over range(m) back to (a, b)."""
    total = m * (m - 1) // 2
    rev = total - 1 - ranks
    # rev indexes pairs counted from the end; solve t(t+1)/2 <= rev
    t = np.floor((np.sqrt(8.0 * rev + 1.0) - 1.0) / 2.0).astype(np.int64)
    t = np.where((t + 1) * (t + 2) // 2 <= rev, t + 1, t)
    t = np.where(t * (t + 1) // 2 > rev, t - 1, t)
    a = m - 2 - t
    b = m - 1 - (rev - t * (t + 1) // 2)
    return a, b


def constraint_triples(constraints: ConstraintSets, max_triples: int = 10_000, seed: int = 0) -> np.ndarray:
    """(i, j, k) rows with i < j from must_link and k from cannot_link.

    Enumerated completely when there are at most ``max_triples``; otherwise a
    uniform sample without replacement.
    """
    must = np.asarray(constraints.must_link, dtype=np.int64)
    cannot = np.asarray(constraints.cannot_link, dtype=np.int64)
    m, c = len(must), len(cannot)
    n_pairs = m * (m - 1) // 2
    total = n_pairs * c
    if total == 0:
        raise InputError("constraint sets yield no triples (need >= 2 must-link and >= 1 cannot-link)")
    if max_triples < 1:
        raise ConfigError("max_triples must be positive")
    if total <= max_triples:
        flat = np.arange(total, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=max_triples, replace=False))
    a, b = _unrank_pairs(flat // c, m)
    return np.column_stack([must[a], must[b], cannot[flat % c]])


def optimize_lambda(
    numeric: SimilarityMatrix,
    text: SimilarityMatrix,
    constraints: ConstraintSets,
    step: float = 0.05,
    *,
    max_triples: int = 10_000,
    seed: int = 0,
    literal_rhs: bool = False,
    atol: float = 1e-12,
) -> LambdaSolution:
    """Grid search for the fusion weight maximizing lam * (1 - lam) under the
    must-link / cannot-link ordering constraints.

    A triple (i, j, k) holds when the fused similarity of (i, j) is at least
    that of (i, k) and of (j, k). With ``literal_rhs`` the right-hand sides use
    the numeric similarity alone. When no grid point satisfies every triple,
    the best satisfied fraction wins (ties: larger objective, then smaller lam).
    """
    if numeric.values.shape != text.values.shape:
        raise InputError(f"shape mismatch: {numeric.values.shape} vs {text.values.shape}")
    constraints.validate(numeric.n)
    grid = lambda_grid(step)
    triples = constraint_triples(constraints, max_triples, seed)
    i, j, k = triples.T
    N, T = numeric.values, text.values
    n_ij, t_ij = N[i, j], T[i, j]
    n_ik, t_ik = N[i, k], T[i, k]
    n_jk, t_jk = N[j, k], T[j, k]

    must = np.asarray(constraints.must_link)
    cannot = np.asarray(constraints.cannot_link)
    off = ~np.eye(len(must), dtype=bool)
    N_mm, T_mm = N[np.ix_(must, must)][off], T[np.ix_(must, must)][off]
    N_mc, T_mc = N[np.ix_(must, cannot)].ravel(), T[np.ix_(must, cannot)].ravel()

    rows = []
    for lam in grid:
        lhs = lam * n_ij + (1 - lam) * t_ij
        if literal_rhs:
            rhs_i, rhs_j = n_ik, n_jk
            mean_c = float(N_mc.mean())
        else:
            rhs_i = lam * n_ik + (1 - lam) * t_ik
            rhs_j = lam * n_jk + (1 - lam) * t_jk
            mean_c = float((lam * N_mc + (1 - lam) * T_mc).mean())
        ok = (lhs >= rhs_i - atol) & (lhs >= rhs_j - atol)
        frac = float(ok.mean())
        mean_m = float((lam * N_mm + (1 - lam) * T_mm).mean())
        rows.append(LambdaGridRow(float(lam), bool(ok.all()), frac, mean_m, mean_c))

    def objective(lam):
        return round(lam * (1.0 - lam), 12)

    feasible = [r for r in rows if r.feasible]
    if feasible:
        best = min(feasible, key=lambda r: (-objective(r.lam), r.lam))
    else:
        best = min(rows, key=lambda r: (-r.satisfied_fraction, -objective(r.lam), r.lam))
    return LambdaSolution(
        lam=best.lam,
        objective=best.lam * (1.0 - best.lam),
        satisfied_fraction=best.satisfied_fraction,
        feasible=best.feasible,
        grid=tuple(rows),
        n_triples=len(triples),
    )


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def save_similarity_csv(sim: SimilarityMatrix, path, samples=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if samples is not None:
            w.writerow(["id", *samples])
        for idx, row in enumerate(sim.values):
            cells = [repr(float(x)) for x in row]
            w.writerow([samples[idx], *cells] if samples is not None else cells)


def save_similarity_binary(sim: SimilarityMatrix | np.ndarray, path) -> None:
    """Little-endian uint64 n, then n*n row-major float64."""
    w = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=float)
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", w.shape[0]))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_similarity_binary(path, kind: str = "fused", lam: float | None = None) -> SimilarityMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise InputError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n * n:
        raise InputError(f"{path}: expected {n}x{n} float64 payload")
    w = np.frombuffer(raw, dtype="<f8", offset=8).reshape(n, n).astype(float)
    if kind == "fused" and lam is None:
        raise InputError("fused matrices need their lambda")
    return SimilarityMatrix(w, kind, lam if kind == "fused" else None)


def write_lambda_grid(solution: LambdaSolution, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "mean_must_link_sim", "mean_cannot_link_sim", "satisfied_fraction", "feasible"])
        for r in solution.grid:
            w.writerow([
                f"{r.lam:.2f}" if abs(r.lam * 100 - round(r.lam * 100)) < 1e-9 else repr(r.lam),
                f"{r.mean_must_link:.10g}",
                f"{r.mean_cannot_link:.10g}",
                f"{r.satisfied_fraction:.10g}",
                int(r.feasible),
            ])
