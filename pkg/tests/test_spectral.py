import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from ascluster.errors import ConfigError, InputError
from ascluster.evaluation import adjusted_rand_index
from ascluster.clustering import kmeans
from ascluster.spectral import (
    SpectralDecomposition,
    degree_matrix,
    eigendecompose,
    eigengap_candidates,
    laplacian,
    spectral_decomposition,
    spectral_embedding,
    write_eigen_report,
)


def random_weights(n, seed, density=1.0):
    rng = np.random.default_rng(seed)
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return w + w.T


def block_graph(sizes, seed, within=(0.6, 1.0), between=(0.0, 0.05)):
    rng = np.random.default_rng(seed)
    lab = np.repeat(np.arange(len(sizes)), sizes)
    same = lab[:, None] == lab[None, :]
    w = np.where(same, rng.uniform(*within, size=same.shape), rng.uniform(*between, size=same.shape))
    w = np.triu(w, 1)
    return w + w.T, lab


def fake_decomposition(values, zero=None):
    vals = np.asarray(values, dtype=float)
    top = vals.max()
    zero = int(np.sum(vals < 1e-8 * top)) if zero is None else zero
    return SpectralDecomposition(vals, np.eye(len(vals)), "random_walk", zero, np.zeros(len(vals)))


# ---------------------------------------------------------------- Laplacians

def test_degrees_and_unnormalized_laplacian():
    w = np.array([[0, 1, 2], [1, 0, 0], [2, 0, 0]], dtype=float)
    assert degree_matrix(w).tolist() == [3, 1, 2]
    assert np.array_equal(laplacian(w), np.array([[3, -1, -2], [-1, 1, 0], [-2, 0, 2]], dtype=float))
    with pytest.raises(ConfigError):
        laplacian(w, "bogus")
    with pytest.raises(InputError):
        laplacian(np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_quadratic_form_identity(n, seed):
    w = random_weights(n, seed)
    f = np.random.default_rng(seed + 1).normal(size=n)
    lap = laplacian(w)
    direct = 0.5 * sum(w[i, j] * (f[i] - f[j]) ** 2 for i in range(n) for j in range(n))
    assert f @ lap @ f == pytest.approx(direct, rel=1e-10, abs=1e-10)
    assert np.allclose(lap.sum(axis=1), 0)
    assert np.linalg.eigvalsh(lap).min() > -1e-10


def test_symmetric_laplacian_spectrum_bounded():
    lap = laplacian(random_weights(8, 3), "symmetric")
    vals = np.linalg.eigvalsh(lap)
    assert vals.min() > -1e-12 and vals.max() <= 2 + 1e-12


@pytest.mark.parametrize("kind", ["unnormalized", "symmetric", "random_walk"])
def test_zero_multiplicity_counts_components(kind):
    blocks = [random_weights(m, m) + 0.1 * (1 - np.eye(m)) for m in (3, 4, 5)]
    w = scipy.linalg.block_diag(*blocks)
    dec = spectral_decomposition(w, kind)
    assert dec.zero_multiplicity == 3


def test_triangle_with_isolated_node():
    w = np.zeros((4, 4))
    w[:3, :3] = 1 - np.eye(3)
    dec = spectral_decomposition(w, "random_walk")
    assert dec.zero_multiplicity == 2
    assert np.allclose(dec.eigenvalues[2:], 1.5)
    # the two null vectors span the component indicators
    null = dec.eigenvectors[:, :2]
    proj = null @ np.linalg.pinv(null)
    for indicator in (np.array([1, 1, 1, 0.0]), np.array([0, 0, 0, 1.0])):
        assert np.allclose(proj @ indicator, indicator, atol=1e-8)


# ---------------------------------------------------------------- eigenpairs

def test_psd_matrix_matches_full_solver():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(6, 6))
    m = a @ a.T
    dec = eigendecompose(m, kind="unnormalized")
    ref_vals, ref_vecs = np.linalg.eigh(m)
    assert np.allclose(dec.eigenvalues, ref_vals, atol=1e-10)
    for j in range(6):
        assert abs(abs(dec.eigenvectors[:, j] @ ref_vecs[:, j]) - 1) < 1e-8
    assert np.all(np.diff(dec.eigenvalues) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 12), st.integers(0, 10_000))
def test_random_walk_matches_generalized_problem(n, seed):
    w = random_weights(n, seed) + 0.01 * (1 - np.eye(n))
    dec = spectral_decomposition(w, "random_walk")
    d = w.sum(axis=1)
    lap = np.diag(d) - w
    ref = scipy.linalg.eigh(lap, np.diag(d), eigvals_only=True)
    assert np.allclose(dec.eigenvalues, ref, atol=1e-9)
    v = dec.eigenvectors
    assert np.allclose(lap @ v, d[:, None] * v * dec.eigenvalues[None, :], atol=1e-8)
    assert np.allclose(np.linalg.norm(v, axis=0), 1)
    assert np.all(dec.residuals < 1e-6)


def test_signs_are_deterministic():
    w = random_weights(10, 4)
    a = spectral_decomposition(w, "random_walk", count=4)
    b = spectral_decomposition(w.copy(), "random_walk", count=4)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)
    for j in range(4):
        col = a.eigenvectors[:, j]
        first = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())[0]
        assert col[first] > 0


def test_count_bounds():
    with pytest.raises(ConfigError):
        spectral_decomposition(random_weights(4, 1), count=5)
    with pytest.raises(ConfigError):
        spectral_decomposition(random_weights(4, 1), count=0)


# ---------------------------------------------------------------- eigengap

def test_eigengap_spike_after_third_value():
    report = eigengap_candidates(fake_decomposition([0, 0.01, 0.02, 0.5, 0.51]), window=4)
    assert report.offset == 1
    assert report.candidates == (3,)
    assert report.gap_for(3) == pytest.approx(0.48)


def test_eigengap_detects_clear_spike():
    vals = [0, 0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95]
    report = eigengap_candidates(fake_decomposition(vals), window=11)
    assert not report.fallback
    assert report.candidates == (7,)


def test_linear_spectrum_falls_back_to_first_maximal_gap():
    report = eigengap_candidates(fake_decomposition(np.linspace(0, 1, 12)), window=10)
    assert report.fallback
    assert report.candidates == (2,)


def test_eigengap_window_errors():
    dec = fake_decomposition(np.linspace(0, 1, 6))
    with pytest.raises(ConfigError):
        eigengap_candidates(dec, window=2)
    with pytest.raises(ConfigError):
        eigengap_candidates(dec, window=10)


def test_eigen_report_csv(tmp_path):
    dec = fake_decomposition([0, 0.01, 0.02, 0.5, 0.51])
    report = eigengap_candidates(dec, window=4)
    write_eigen_report(dec, report, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "index,eigenvalue,gap,candidate"
    assert lines[3].split(",")[0] == "3" and lines[3].endswith(",1")
    assert sum(line.endswith(",1") for line in lines[1:]) == 1


# ---------------------------------------------------------------- embedding

def test_embedding_shape_and_columns():
    dec = spectral_decomposition(random_weights(9, 2), "random_walk", count=5)
    emb = spectral_embedding(dec, 3)
    assert emb.coordinates.shape == (9, 3) and emb.source == (1, 2, 3)
    assert np.array_equal(emb.coordinates, dec.eigenvectors[:, 1:4])
    unit = spectral_embedding(dec, 3, normalize_rows=True)
    assert np.allclose(np.linalg.norm(unit.coordinates, axis=1), 1)
    with pytest.raises(ConfigError):
        spectral_embedding(dec, 5)


def test_planted_blocks_recovered_from_embedding():
    w, lab = block_graph((20, 15, 25), seed=3)
    dec = spectral_decomposition(w, "random_walk", count=10)
    report = eigengap_candidates(dec, window=8)
    assert 3 in report.candidates
    emb = spectral_embedding(dec, 2)
    assign = kmeans(emb.coordinates, 3, seed=0)
    assert adjusted_rand_index(assign.labels, lab) == pytest.approx(1.0)
