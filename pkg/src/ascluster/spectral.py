"""Degree and Laplacian matrices, smallest eigenpairs, eigengap candidates, embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from ascluster.errors import ConfigError, InputError, NumericalError
from ascluster.similarity import SimilarityMatrix

LAPLACIAN_KINDS = ("unnormalized", "symmetric", "random_walk")
RESIDUAL_TOL = 1e-6
ZERO_REL_TOL = 1e-8


def _weights(w) -> np.ndarray:
    a = w.values if isinstance(w, SimilarityMatrix) else np.asarray(w, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"weight matrix must be square, got {a.shape}")
    return a


def degree_matrix(w) -> np.ndarray:
    """Degrees d_i = sum_j w_ij, returned as a vector (the diagonal of D)."""
    return _weights(w).sum(axis=1)


def _inv_sqrt_degree(d: np.ndarray) -> np.ndarray:
    # isolated nodes keep a unit scale so their indicator survives the back-transform
    out = np.ones_like(d)
    pos = d > 0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def laplacian(w, kind: str = "unnormalized") -> np.ndarray:
    """L = D - W, or D^-1/2 L D^-1/2 for ``symmetric``.

    The random-walk operator D^-1 L is not formed; its spectrum comes from the
    pencil (L, D), so ``random_walk`` returns the unnormalized L.
    """
    if kind not in LAPLACIAN_KINDS:
        raise ConfigError(f"unknown Laplacian kind {kind!r}")
    a = _weights(w)
    d = a.sum(axis=1)
    lap = np.diag(d) - a
    if kind == "symmetric":
        s = _inv_sqrt_degree(d)
        lap = s[:, None] * lap * s[None, :]
    return 0.5 * (lap + lap.T)


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian_kind: str
    zero_multiplicity: int
    residuals: np.ndarray

    @property
    def count(self) -> int:
        return len(self.eigenvalues)


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        scale = np.max(np.abs(col), initial=0.0)
        if scale == 0:
            continue
        first = np.flatnonzero(np.abs(col) > 1e-10 * scale)[0]
        if col[first] < 0:
            out[:, j] = -col
    return out


def eigendecompose(lap: np.ndarray, d: np.ndarray | None = None, kind: str = "random_walk",
                   count: int | None = None) -> SpectralDecomposition:
    """Smallest ``count`` eigenpairs in ascending order.

    For ``random_walk``, ``lap`` is L = D - W and the generalized problem
    L v = lam D v is solved through L_sym; eigenvectors are D^-1/2 u rescaled to
    unit length. Signs are fixed so each vector's first non-negligible entry is
    positive.
    """
    if kind not in LAPLACIAN_KINDS:
        raise ConfigError(f"unknown Laplacian kind {kind!r}")
    lap = np.asarray(lap, dtype=float)
    n = lap.shape[0]
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise ConfigError(f"count must be in [1, {n}], got {count}")
    if kind == "random_walk":
        if d is None:
            d = np.diag(lap).copy()
        d = np.asarray(d, dtype=float)
        s = _inv_sqrt_degree(d)
        target = s[:, None] * lap * s[None, :]
    else:
        target = lap
    target = 0.5 * (target + target.T)
    try:
        vals, vecs = scipy.linalg.eigh(target, subset_by_index=[0, count - 1], driver="evr")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"eigensolver failed to converge: {exc}") from None
    if kind == "random_walk":
        vecs = s[:, None] * vecs
        norms = np.linalg.norm(vecs, axis=0)
        vecs = vecs / np.where(norms > 0, norms, 1.0)
    vecs = _canonical_signs(vecs)

    if kind == "random_walk":
        dv = d[:, None] * vecs
        res = np.linalg.norm(lap @ vecs - dv * vals[None, :], axis=0)
        # vectors living on isolated nodes have D v ~ 0; floor the reference by the degree scale
        ref = np.maximum(np.linalg.norm(dv, axis=0), 1e-8 * max(float(d.max(initial=0.0)), 1e-300))
    else:
        res = np.linalg.norm(lap @ vecs - vecs * vals[None, :], axis=0)
        ref = np.ones(count)
    scale = max(1.0, float(np.abs(lap).max(initial=0.0)))
    bad = res > RESIDUAL_TOL * ref * scale
    if np.any(bad):
        worst = int(np.argmax(res / ref))
        raise NumericalError(f"eigenpair {worst} residual {res[worst]:.3e} exceeds tolerance")

    top = float(vals.max(initial=0.0))
    zero = int(np.sum(vals < ZERO_REL_TOL * top)) if top > 0 else count
    return SpectralDecomposition(vals, vecs, kind, zero, res / ref)


def spectral_decomposition(w, kind: str = "random_walk", count: int | None = None) -> SpectralDecomposition:
    """Laplacian of ``w`` followed by :func:`eigendecompose`."""
    a = _weights(w)
    lap = laplacian(a, "unnormalized" if kind == "random_walk" else kind)
    return eigendecompose(lap, a.sum(axis=1), kind, count)


@dataclass(frozen=True)
class EigengapReport:
    eigenvalues: np.ndarray   # the inspected window (near-zero eigenvalues removed)
    gaps: np.ndarray          # gaps[g] = window[g + 1] - window[g]
    candidates: tuple[int, ...]
    window: int
    offset: int               # near-zero eigenvalues skipped before the window
    threshold: float
    fallback: bool

    def k_of_gap(self, g: int) -> int:
        return self.offset + g + 1

    def gap_for(self, k: int) -> float:
        g = k - self.offset - 1
        if not 0 <= g < len(self.gaps):
            return 0.0
        return float(self.gaps[g])


def eigengap_candidates(dec: SpectralDecomposition, window: int = 20) -> EigengapReport:
    """Cluster-count candidates from spikes in consecutive eigenvalue gaps.

    Near-zero eigenvalues are dropped, the next ``window`` eigenvalues are
    inspected, and k is a candidate when the gap between the k-th and (k+1)-th
    eigenvalue (counting the dropped ones) exceeds mean + 2 sd of the window's
    gaps. If nothing qualifies, the first largest gap is used.
    """
    if window < 3:
        raise ConfigError("eigengap window must be >= 3")
    offset = dec.zero_multiplicity
    vals = np.asarray(dec.eigenvalues[offset:offset + window], dtype=float)
    if len(vals) < window:
        raise ConfigError(
            f"window {window} needs {offset + window} eigenvalues, only {dec.count} retained"
        )
    gaps = np.maximum(np.diff(vals), 0.0)
    threshold = float(gaps.mean() + 2.0 * gaps.std())
    # rounding noise on evenly spaced spectra must not count as a spike
    tol = 1e-12 * max(1.0, abs(float(vals[-1])))
    spikes = np.flatnonzero(gaps > threshold + tol)
    fallback = spikes.size == 0
    if fallback:
        spikes = np.flatnonzero(gaps >= gaps.max() - tol)[:1]
    candidates = tuple(int(offset + g + 1) for g in spikes)
    return EigengapReport(vals, gaps, candidates, window, offset, threshold, fallback)


@dataclass(frozen=True)
class Embedding:
    coordinates: np.ndarray
    k: int
    source: tuple[int, ...]   # 0-based eigenpair indices used as columns


def spectral_embedding(dec: SpectralDecomposition, k: int, normalize_rows: bool = False) -> Embedding:
    """Rows of eigenvectors e_2 .. e_{k+1} (the trivial first vector is skipped)."""
    if k < 1:
        raise ConfigError("embedding dimension must be >= 1")
    if k + 1 > dec.count:
        raise ConfigError(f"embedding dimension {k} needs {k + 1} eigenpairs, only {dec.count} retained")
    cols = tuple(range(1, k + 1))
    coords = np.array(dec.eigenvectors[:, 1:k + 1])
    if normalize_rows:
        norms = np.linalg.norm(coords, axis=1, keepdims=True)
        coords = coords / np.where(norms > 0, norms, 1.0)
    return Embedding(coords, k, cols)


def write_eigen_report(dec: SpectralDecomposition, report: EigengapReport, path) -> None:
    """index, eigenvalue, gap to the next eigenvalue, candidate flag (1-based index)."""
    cands = set(report.candidates)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "gap", "candidate"])
        last = report.offset + report.window
        for i in range(min(dec.count, last)):
            gap = dec.eigenvalues[i + 1] - dec.eigenvalues[i] if i + 1 < dec.count else float("nan")
            in_window = report.offset <= i < last - 1
            w.writerow([i + 1, f"{dec.eigenvalues[i]:.10g}",
                        f"{gap:.10g}" if in_window else "", int((i + 1) in cands)])


def write_embedding(emb: Embedding, path, samples) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"e{j + 1}" for j in emb.source)])
        for sid, row in zip(samples, emb.coordinates):
            w.writerow([sid, *(f"{x:.10g}" for x in row)])
