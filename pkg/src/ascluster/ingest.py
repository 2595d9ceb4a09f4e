"""Loading numeric features, term counts and constraint sets; synthetic bundles.

File formats
------------
numeric CSV      ``id,<feature>,...`` header, one numeric row per sample
term counts      sparse triplets ``doc_id,term_index,count`` (0-based term index,
                 optional header line)
lexicon          one term per line
constraints      JSON object ``{"must_link": [...], "cannot_link": [...]}``
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from ascluster.errors import ConfigError, InputError


@dataclass(frozen=True)
class NumericDataset:
    samples: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "samples", tuple(str(s) for s in self.samples))
        object.__setattr__(self, "features", tuple(str(f) for f in self.features))
        if values.ndim != 2 or values.shape != (len(self.samples), len(self.features)):
            raise InputError(
                f"values shape {values.shape} does not match "
                f"{len(self.samples)} samples x {len(self.features)} features"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("numeric values must be finite")
        if len(set(self.samples)) != len(self.samples):
            raise InputError("duplicate sample id")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def p(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class TextDataset:
    samples: tuple[str, ...]
    lexicon: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "samples", tuple(str(s) for s in self.samples))
        object.__setattr__(self, "lexicon", tuple(str(t) for t in self.lexicon))
        if counts.ndim != 2 or counts.shape != (len(self.samples), len(self.lexicon)):
            raise InputError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.samples)} documents x {len(self.lexicon)} terms"
            )
        if counts.size and not np.all(np.equal(np.mod(counts, 1), 0)):
            raise InputError("term counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise InputError("term counts must be non-negative")
        if any(not t for t in self.lexicon):
            raise InputError("empty lexicon entry")
        if len(set(self.lexicon)) != len(self.lexicon):
            raise InputError("duplicate lexicon entry")
        if len(set(self.samples)) != len(self.samples):
            raise InputError("duplicate document id")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def q(self) -> int:
        return len(self.lexicon)

    def reorder(self, samples: Sequence[str]) -> "TextDataset":
        """Rows rearranged to follow ``samples`` (matched by identifier)."""
        samples = tuple(str(s) for s in samples)
        if set(samples) != set(self.samples) or len(samples) != len(self.samples):
            missing = sorted(set(samples) ^ set(self.samples))[:5]
            raise InputError(f"sample identifiers differ between modalities, e.g. {missing}")
        pos = {s: i for i, s in enumerate(self.samples)}
        order = [pos[s] for s in samples]
        return TextDataset(samples, self.lexicon, self.counts[order])


@dataclass(frozen=True)
class ConstraintSets:
    must_link: tuple[int, ...]
    cannot_link: tuple[int, ...]

    def __post_init__(self):
        must = tuple(sorted({int(i) for i in self.must_link}))
        cannot = tuple(sorted({int(i) for i in self.cannot_link}))
        overlap = set(must) & set(cannot)
        if overlap:
            raise InputError(f"indices in both must_link and cannot_link: {sorted(overlap)[:10]}")
        if any(i < 0 for i in must + cannot):
            raise InputError("constraint indices must be non-negative")
        object.__setattr__(self, "must_link", must)
        object.__setattr__(self, "cannot_link", cannot)

    def validate(self, n: int) -> "ConstraintSets":
        bad = [i for i in self.must_link + self.cannot_link if i >= n]
        if bad:
            raise InputError(f"constraint index {bad[0]} out of range for n={n}")
        return self

    def to_json(self) -> dict:
        return {"must_link": list(self.must_link), "cannot_link": list(self.cannot_link)}


def load_numeric_csv(path) -> NumericDataset:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"numeric file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "id":
        raise InputError(f"{path}: header must start with 'id' followed by feature names")
    features = header[1:]
    samples, values = [], []
    # row numbers are 1-based file lines, header is row 1
    for rownum, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
        parsed = []
        for name, cell in zip(features, row[1:]):
            try:
                x = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric value {cell!r} at row {rownum}, column {name}"
                ) from None
            if not math.isfinite(x):
                raise InputError(f"{path}: non-finite value at row {rownum}, column {name}")
            parsed.append(x)
        samples.append(row[0].strip())
        values.append(parsed)
    seen = set()
    for s in samples:
        if s in seen:
            raise InputError(f"{path}: duplicate sample id {s!r}")
        seen.add(s)
    return NumericDataset(tuple(samples), tuple(features), np.array(values, dtype=float).reshape(len(samples), len(features)))


def write_numeric_csv(data: NumericDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *data.features])
        for sid, row in zip(data.samples, data.values):
            w.writerow([sid, *(repr(float(x)) for x in row)])


def load_lexicon(path) -> tuple[str, ...]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"lexicon file not found: {path}")
    terms = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    terms = [t for t in terms if t]
    if not terms:
        raise InputError(f"{path}: empty lexicon")
    return tuple(terms)


def load_term_frequency(matrix_path, lexicon_path, samples: Sequence[str] | None = None) -> TextDataset:
    """Read sparse ``doc_id,term_index,count`` triplets into a dense count matrix.

    With ``samples`` given, rows follow that order and documents absent from the
    triplet file are all-zero rows; unknown doc ids are rejected. Without it,
    rows follow the order of first appearance.
    """
    lexicon = load_lexicon(lexicon_path)
    matrix_path = Path(matrix_path)
    if not matrix_path.is_file():
        raise InputError(f"term-frequency file not found: {matrix_path}")
    with matrix_path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0].strip() == "doc_id":
        rows = rows[1:]
        start = 2
    else:
        start = 1

    if samples is None:
        order: dict[str, int] = {}
        for row in rows:
            order.setdefault(row[0].strip(), len(order))
    else:
        order = {str(s): i for i, s in enumerate(samples)}
    counts = np.zeros((len(order), len(lexicon)), dtype=np.int64)
    seen = set()
    for lineno, row in enumerate(rows, start=start):
        if len(row) != 3:
            raise InputError(f"{matrix_path}: line {lineno} must have 3 fields")
        doc = row[0].strip()
        try:
            term = int(row[1])
            count = int(row[2])
        except ValueError:
            raise InputError(f"{matrix_path}: line {lineno}: non-integer term index or count") from None
        if doc not in order:
            raise InputError(f"{matrix_path}: line {lineno}: unknown doc_id {doc!r}")
        if not 0 <= term < len(lexicon):
            raise InputError(
                f"{matrix_path}: line {lineno}: term_index {term} outside lexicon of size {len(lexicon)}"
            )
        if count < 0:
            raise InputError(f"{matrix_path}: line {lineno}: negative count {count}")
        if (doc, term) in seen:
            raise InputError(f"{matrix_path}: line {lineno}: repeated (doc_id, term_index) pair")
        seen.add((doc, term))
        counts[order[doc], term] = count
    return TextDataset(tuple(order), lexicon, counts)


def load_dense_counts(path, lexicon_path=None) -> TextDataset:
    """Dense count CSV: ``id,<term>,...`` header, one row per document."""
    data = load_numeric_csv(path)
    lexicon = load_lexicon(lexicon_path) if lexicon_path is not None else data.features
    if tuple(lexicon) != data.features:
        raise InputError(f"{path}: header terms do not match the lexicon")
    return TextDataset(data.samples, lexicon, data.values)


def write_term_frequency(text: TextDataset, matrix_path, lexicon_path) -> None:
    rows, cols = np.nonzero(text.counts)
    with Path(matrix_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "term_index", "count"])
        for r, c in zip(rows, cols):
            w.writerow([text.samples[r], int(c), int(text.counts[r, c])])
    Path(lexicon_path).write_text("".join(t + "\n" for t in text.lexicon), encoding="utf-8")


def load_constraints(path, n: int) -> ConstraintSets:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"constraints file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict) or "must_link" not in raw or "cannot_link" not in raw:
        raise InputError(f"{path}: expected an object with 'must_link' and 'cannot_link'")
    for key in ("must_link", "cannot_link"):
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in raw[key]):
            raise InputError(f"{path}: {key} must be an array of integers")
    return ConstraintSets(tuple(raw["must_link"]), tuple(raw["cannot_link"])).validate(n)


def write_constraints(constraints: ConstraintSets, path) -> None:
    Path(path).write_text(json.dumps(constraints.to_json()) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# synthetic bundles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-cluster bundle description.

    ``numeric_separability`` and ``text_separability`` group planted cluster
    indices: clusters sharing a group are drawn from the same distribution in
    that modality, and a cluster left out of every group carries no signal
    there (its numeric rows come from the pooled mixture of the groups, its
    documents use only terms that occur everywhere). Two clusters are
    separated by a modality when both appear in it under different groups.
    """

    n: int = 150
    clusters: int = 3
    numeric_separability: tuple[tuple[int, ...], ...] = ((0,), (1, 2))
    text_separability: tuple[tuple[int, ...], ...] = ((1,), (2,))
    seed: int = 7
    proportions: tuple[float, ...] | None = (0.4, 0.3, 0.3)
    numeric_noise: float = 1.0
    numeric_separation: float = 10.0
    features: int = 5
    text_dispersion: float = 0.5
    terms_per_group: int = 12
    background_terms: int = 6
    background_share: float = 0.3
    ubiquitous_terms: int = 2
    doc_length: float = 25.0
    constraint_size: int = 6

    def check(self) -> None:
        if self.clusters < 2:
            raise ConfigError("clusters must be >= 2")
        if self.n < 10 * self.clusters:
            raise ConfigError(f"n={self.n} is below 10 x clusters ({10 * self.clusters})")
        for name in ("numeric_separability", "text_separability"):
            flat = [c for g in getattr(self, name) for c in g]
            if any(len(g) == 0 for g in getattr(self, name)):
                raise ConfigError(f"{name} contains an empty group")
            if len(set(flat)) != len(flat) or not all(0 <= c < self.clusters for c in flat):
                raise ConfigError(f"{name} must name distinct clusters in 0..{self.clusters - 1}")
        for a, b in combinations(range(self.clusters), 2):
            if not (_separates(self.numeric_separability, a, b) or _separates(self.text_separability, a, b)):
                raise ConfigError(f"planted clusters {a} and {b} are separable under neither modality")
        if self.proportions is not None:
            if len(self.proportions) != self.clusters or min(self.proportions) <= 0:
                raise ConfigError("proportions need one positive weight per cluster")
            if min(self.sizes()) < 2:
                raise ConfigError("every planted cluster needs at least 2 samples")
        if min(self.numeric_noise, self.text_dispersion, self.doc_length) <= 0:
            raise ConfigError("noise, dispersion and doc_length must be positive")
        if not 0.0 <= self.background_share < 1.0:
            raise ConfigError("background_share must be in [0, 1)")
        if self.features < 1 or self.terms_per_group < 1 or self.ubiquitous_terms < 0:
            raise ConfigError("features and terms_per_group must be >= 1, ubiquitous_terms >= 0")

    @classmethod
    def planted(cls, clusters: int, **kwargs) -> "SyntheticSpec":
        """Default layout for any cluster count: numeric splits cluster 0 from the
        rest, text tells clusters 1.. apart, and cluster 0 holds 40% of samples."""
        rest = tuple(range(1, clusters))
        layout = dict(
            clusters=clusters,
            numeric_separability=((0,), rest) if rest else ((0,),),
            text_separability=tuple((c,) for c in rest),
            proportions=(0.4,) + (0.6 / max(1, len(rest)),) * len(rest),
        )
        layout.update(kwargs)
        return cls(**layout)

    def sizes(self) -> list[int]:
        """Cluster sizes: largest-remainder rounding of ``n * proportions``."""
        w = np.ones(self.clusters) if self.proportions is None else np.asarray(self.proportions, float)
        raw = self.n * w / w.sum()
        out = np.floor(raw).astype(int)
        order = np.argsort(-(raw - out), kind="stable")
        out[order[: self.n - out.sum()]] += 1
        return out.tolist()


def _group_of(partition) -> dict[int, int]:
    return {c: gi for gi, g in enumerate(partition) for c in g}


def _separates(partition, a: int, b: int) -> bool:
    g = _group_of(partition)
    return a in g and b in g and g[a] != g[b]


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(numeric, text, labels, constraints)`` for a planted-cluster spec.

    Numeric rows are Gaussian around one center per numeric group, mixed by a
    fixed random linear map so the features are correlated. Documents draw
    from the vocabulary block of their text group plus a shared background
    block with Dirichlet-perturbed term probabilities; every document also
    contains each ubiquitous term, which therefore carries zero idf.
    """
    spec.check()
    rng = np.random.default_rng(spec.seed)
    k, n, p = spec.clusters, spec.n, spec.features
    labels = np.repeat(np.arange(k), spec.sizes())[rng.permutation(n)]

    num_group = _group_of(spec.numeric_separability)
    n_num = max(1, len(spec.numeric_separability))
    directions = rng.standard_normal((n_num, p))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = spec.numeric_separation * spec.numeric_noise * directions
    pooled = rng.integers(0, n_num, size=n)
    row_group = np.array([num_group.get(c, -1) for c in labels])
    row_group = np.where(row_group < 0, pooled, row_group)
    latent = centers[row_group] + spec.numeric_noise * rng.standard_normal((n, p))
    mixing = np.eye(p) + 0.5 * rng.standard_normal((p, p))
    values = latent @ mixing.T + 50.0

    txt_group = _group_of(spec.text_separability)
    n_txt = len(spec.text_separability)
    t, nb, nu = spec.terms_per_group, spec.background_terms, spec.ubiquitous_terms
    q = n_txt * t + nb + nu
    bg = slice(n_txt * t, n_txt * t + nb)
    ubiq = slice(n_txt * t + nb, q)
    counts = np.zeros((n, q), dtype=np.int64)
    for i in range(n):
        g = txt_group.get(int(labels[i]))
        if g is not None:
            base = np.zeros(q)
            share = spec.background_share if nb else 0.0
            base[g * t:(g + 1) * t] = (1.0 - share) / t
            if nb:
                base[bg] = share / nb
            support = base > 0
            probs = np.zeros(q)
            probs[support] = rng.dirichlet(base[support] / spec.text_dispersion * t)
            counts[i] = rng.multinomial(max(1, int(rng.poisson(spec.doc_length))), probs)
        if nu:
            counts[i, ubiq] += 1 + rng.poisson(1.0, nu)

    width = len(str(n - 1))
    samples = tuple(f"s{i:0{width}d}" for i in range(n))
    features = tuple(f"Var{j + 1}" for j in range(p))
    lexicon = tuple(
        [f"g{g}_t{j}" for g in range(n_txt) for j in range(t)]
        + [f"bg_t{j}" for j in range(nb)]
        + [f"common_t{j}" for j in range(nu)]
    )
    numeric = NumericDataset(samples, features, values)
    text = TextDataset(samples, lexicon, counts)
    constraints = _synthetic_constraints(spec, labels, latent)
    return numeric, text, labels, constraints


def _synthetic_constraints(spec, labels, latent) -> ConstraintSets:
    """Must-link: the members of cluster 1 closest to its mean; cannot-link:
    the most central members of every other cluster."""
    def central(c, m):
        idx = np.flatnonzero(labels == c)
        dist = np.linalg.norm(latent[idx] - latent[idx].mean(axis=0), axis=1)
        return idx[np.argsort(dist, kind="stable")[:m]].tolist()

    must = central(1, spec.constraint_size)
    cannot = []
    for c in range(spec.clusters):
        if c != 1:
            cannot += central(c, max(1, spec.constraint_size // 2))
    return ConstraintSets(tuple(must), tuple(cannot))
