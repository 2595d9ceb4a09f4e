"""Internal validity metrics, ARI, per-cluster term ratios and feature summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ascluster.errors import ConfigError, DegenerateError, InputError
from ascluster.ingest import NumericDataset, TextDataset


def _prepare(points, labels):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise InputError(f"{len(labels)} labels for {x.shape[0]} points")
    uniq, lab = np.unique(labels, return_inverse=True)
    return x, lab, len(uniq)


def silhouette(points, labels) -> tuple[np.ndarray, float]:
    """Per-sample silhouette values and their mean (Euclidean; singletons score 0)."""
    x, lab, k = _prepare(points, labels)
    if k < 2:
        raise ConfigError("silhouette needs at least 2 clusters")
    n = len(x)
    dist = squareform(pdist(x))
    sizes = np.bincount(lab, minlength=k)
    sums = np.zeros((n, k))
    for c in range(k):
        sums[:, c] = dist[:, lab == c].sum(axis=1)
    own = sizes[lab]
    a = np.where(own > 1, sums[np.arange(n), lab] / np.maximum(own - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(n), lab] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return s, float(s.mean())


def cluster_centroids(points, labels) -> np.ndarray:
    x, lab, k = _prepare(points, labels)
    return np.array([x[lab == c].mean(axis=0) for c in range(k)])


def intra_inter_ratio(points, labels, centers=None) -> float:
    """Mean point-to-own-center distance over mean pairwise center distance."""
    x, lab, k = _prepare(points, labels)
    if k < 2:
        raise ConfigError("intra/inter ratio needs at least 2 clusters")
    centers = cluster_centroids(x, lab) if centers is None else np.asarray(centers, dtype=float)
    if centers.shape[0] != k:
        raise InputError(f"{centers.shape[0]} centers for {k} clusters")
    intra = float(np.linalg.norm(x - centers[lab], axis=1).mean())
    inter = float(pdist(centers).mean())
    if inter == 0.0:
        raise DegenerateError("all cluster centers coincide")
    return intra / inter


def calinski_harabasz(points, labels) -> float:
    """Between/within dispersion ratio (trace form); inf when within dispersion is 0."""
    x, lab, k = _prepare(points, labels)
    n = len(x)
    if not 2 <= k <= n:
        raise ConfigError(f"Calinski-Harabasz needs 2 <= k <= n (k={k}, n={n})")
    mean = x.mean(axis=0)
    between = within = 0.0
    for c in range(k):
        members = x[lab == c]
        centroid = members.mean(axis=0)
        between += len(members) * float(((centroid - mean) ** 2).sum())
        within += float(((members - centroid) ** 2).sum())
    if within == 0.0 or k == n:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def davies_bouldin(points, labels) -> float:
    x, lab, k = _prepare(points, labels)
    if k < 2:
        raise ConfigError("Davies-Bouldin needs at least 2 clusters")
    centroids = cluster_centroids(x, lab)
    spread = np.array([np.linalg.norm(x[lab == c] - centroids[c], axis=1).mean() for c in range(k)])
    sep = squareform(pdist(centroids))
    if np.any(sep[~np.eye(k, dtype=bool)] == 0):
        raise DegenerateError("coincident cluster centroids")
    np.fill_diagonal(sep, np.inf)
    ratio = (spread[:, None] + spread[None, :]) / sep
    return float(ratio.max(axis=1).mean())


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("label vectors must have equal length")
    n = len(a)
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all singletons or one cluster) and identical in kind
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass(frozen=True)
class MetricBundle:
    silhouette: float
    intra_inter: float | None
    chc: float | None
    dbi: float | None

    def to_json(self) -> dict:
        def clean(v):
            if v is None or not math.isfinite(v):
                return None
            return float(f"{v:.10g}")
        return {"silhouette": clean(self.silhouette), "intra_inter": clean(self.intra_inter),
                "chc": clean(self.chc), "dbi": clean(self.dbi)}


def metric_bundle(points, labels, centers=None) -> MetricBundle:
    """All four internal metrics; undefined ones (degenerate geometry) become None."""
    _, s = silhouette(points, labels)

    def attempt(fn, *args):
        try:
            return fn(*args)
        except (DegenerateError, ConfigError):
            return None
    return MetricBundle(
        s,
        attempt(intra_inter_ratio, points, labels, centers),
        attempt(calinski_harabasz, points, labels),
        attempt(davies_bouldin, points, labels),
    )


# --------------------------------------------------------------------------
# text profiles and feature summaries
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterProfile:
    terms: tuple[str, ...]
    clusters: tuple[int, ...]
    ratios: np.ndarray         # terms x clusters
    totals: np.ndarray         # grand total count per term
    dominant: np.ndarray       # cluster index per term, -1 when the term never occurs


def word_frequency_ratio(text: TextDataset, labels) -> ClusterProfile:
    """Share of each term's total count that falls in each cluster."""
    labels = np.asarray(labels)
    if labels.shape != (text.n,):
        raise InputError(f"{len(labels)} labels for {text.n} documents")
    clusters, lab = np.unique(labels, return_inverse=True)
    per_cluster = np.zeros((text.q, len(clusters)), dtype=np.int64)
    for c in range(len(clusters)):
        per_cluster[:, c] = text.counts[lab == c].sum(axis=0)
    totals = per_cluster.sum(axis=1)
    ratios = np.zeros(per_cluster.shape)
    occurs = totals > 0
    ratios[occurs] = per_cluster[occurs] / totals[occurs, None]
    dominant = np.where(occurs, np.argmax(ratios, axis=1), -1)
    return ClusterProfile(text.lexicon, tuple(int(c) for c in clusters), ratios, totals, dominant)


def write_profile(profile: ClusterProfile, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", *(f"cluster_{c + 1}" for c in profile.clusters), "total", "dominant"])
        for t, row, tot, dom in zip(profile.terms, profile.ratios, profile.totals, profile.dominant):
            w.writerow([t, *(f"{r:.6f}" for r in row), int(tot),
                        profile.clusters[dom] + 1 if dom >= 0 else ""])


@dataclass(frozen=True)
class FeatureSummary:
    feature: str
    mean: float
    sd: float
    cv: float | None   # None when the mean is 0


def summarize_columns(features, values) -> list[FeatureSummary]:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise InputError("summary needs at least 2 rows")
    out = []
    for name, col in zip(features, values.T):
        mean = float(col.mean())
        sd = float(col.std(ddof=1))
        if mean == 0.0:
            cv = 0.0 if sd == 0.0 else None
        else:
            cv = 100.0 * sd / mean
        out.append(FeatureSummary(str(name), mean, sd, cv))
    return out


def dataset_summary(data: NumericDataset) -> list[FeatureSummary]:
    """Per-feature mean, sample SD and coefficient of variation 100 * SD / mean."""
    return summarize_columns(data.features, data.values)


def coefficient_of_variation(mean: float, sd: float) -> float:
    if mean == 0.0:
        raise DegenerateError("coefficient of variation undefined for zero mean")
    return 100.0 * sd / mean


def write_summary(rows: list[FeatureSummary], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "mean", "standard_deviation", "coefficient_of_variation"])
        for r in rows:
            w.writerow([r.feature, f"{r.mean:.6g}", f"{r.sd:.6g}",
                        f"{r.cv:.2f}" if r.cv is not None else "undefined"])
