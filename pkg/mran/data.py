"""
Data - ingestion of the processed bag-of-features review corpus.

Layout: one directory per domain holding `positive.review`, `negative.review` and an
optional `unlabeled.review`; one review per line as whitespace-separated `token:count`
pairs plus a `#label#:positive|negative` pair.
"""
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from scipy import sparse

from mran.errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

LABEL_TOKEN = "#label#"
LABEL_VALUES = {"positive": 1, "negative": 0}
LABELED_FILES = (("positive.review", 1), ("negative.review", 0))
UNLABELED_FILE = "unlabeled.review"
LAYOUT_HINT = (
    "expected one directory per domain under the data directory, each containing "
    "'positive.review', 'negative.review' and optionally 'unlabeled.review' "
    "(lines of 'token:count ... #label#:positive|negative')"
)

Features = Union[np.ndarray, sparse.csr_matrix]


@dataclass
class RawReview:
    """Token counts of one review before vocabulary lookup"""
    counts: Dict[str, float]
    label: Optional[int] = None


@dataclass(frozen=True)
class SparseExample:
    """One review as canonical (feature-id, count) pairs with strictly increasing ids"""
    features: Tuple[Tuple[int, float], ...]
    label: Optional[int]
    domain: int

    def __post_init__(self):
        previous = -1
        for feature_id, count in self.features:
            if feature_id <= previous:
                raise ValidationError(f"feature ids must be strictly increasing, got {feature_id} after {previous}")
            if not count > 0.0:
                raise ValidationError(f"feature counts must be positive, got {count} for id {feature_id}")
            previous = feature_id
        if self.label not in (None, 0, 1):
            raise ValidationError(f"label must be 0, 1 or None, got {self.label}")


@dataclass
class Vocabulary:
    """Ordered feature strings; the line number of a token is its id"""
    tokens: List[str]
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def save(self, path: Path):
        Path(path).write_text("".join(f"{token}\n" for token in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class DomainData:
    """Labeled and unlabeled rows of one domain (dense array or CSR matrix)"""
    name: str
    labeled: Features
    labels: np.ndarray
    unlabeled: Features

    @property
    def num_labeled(self) -> int:
        return self.labeled.shape[0]

    @property
    def num_unlabeled(self) -> int:
        return self.unlabeled.shape[0]


@dataclass
class MultiDomainDataset:
    domains: List[DomainData]
    input_dim: int
    vocabulary: Optional[Vocabulary] = None

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    @property
    def has_unlabeled(self) -> bool:
        return all(d.num_unlabeled > 0 for d in self.domains)


def take_rows(features: Features, indices: Union[np.ndarray, Sequence[int], slice]) -> np.ndarray:
    """Dense float64 rows, densifying sparse storage at batch time"""
    rows = features[indices]
    if sparse.issparse(rows):
        return rows.toarray().astype(np.float64, copy=False)
    return np.asarray(rows, dtype=np.float64)



# ----------------------------------------------------------------------------
# Parsing and vectorization
# ----------------------------------------------------------------------------

def parse_review_line(line: str, line_number: Optional[int] = None) -> RawReview:
    """
    Parse one `token:count ... #label#:value` line.

    Duplicate tokens have their counts summed. A line without a label pair
    yields label None.

    Raises:
        ParseError: malformed pair, non-numeric or non-positive count, unknown label value
    """
    counts: Dict[str, float] = {}
    label = None
    for pair in line.split():
        token, sep, value = pair.rpartition(":")
        if not sep or not token:
            raise ParseError(f"malformed pair '{pair}' (expected token:count)", line_number, pair)
        if token == LABEL_TOKEN:
            if value not in LABEL_VALUES:
                raise ParseError(f"unknown label value '{value}' in '{pair}'", line_number, pair)
            label = LABEL_VALUES[value]
            continue
        try:
            count = float(value)
        except ValueError:
            raise ParseError(f"non-numeric count in pair '{pair}'", line_number, pair) from None
        if not math.isfinite(count) or count <= 0.0:
            raise ParseError(f"count must be positive and finite in pair '{pair}'", line_number, pair)
        counts[token] = counts.get(token, 0.0) + count
    return RawReview(counts, label)


def read_review_file(path: Path, label: Optional[int] = None) -> List[RawReview]:
    """
    Read every non-blank line of a review file.

    `label` is the label implied by the file (None for unlabeled files, whose
    label pairs are discarded).
    """
    reviews = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            review = parse_review_line(line, number)
            if label is None:
                review.label = None
            elif review.label is None:
                review.label = label
            elif review.label != label:
                raise ParseError(f"label {review.label} contradicts file {Path(path).name}", number)
            reviews.append(review)
    return reviews


def build_vocabulary(corpora: Iterable[Union[RawReview, Mapping[str, float]]], size: int = 5000) -> Vocabulary:
    """Top `size` features by total count across all corpora; ties broken lexicographically"""
    if size < 1:
        raise ConfigError(f"vocabulary size must be at least 1, got {size}")
    totals: Counter = Counter()
    for item in corpora:
        totals.update(item.counts if isinstance(item, RawReview) else item)
    if len(totals) < size:
        logger.warning(f"⚠ Only {len(totals)} distinct features, fewer than the requested {size}; keeping all")
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([token for token, _ in ranked[:size]])


def vectorize(review: RawReview, vocab: Vocabulary, domain: int) -> SparseExample:
    """Map tokens to ids, dropping out-of-vocabulary tokens; values are raw counts"""
    pairs = sorted((vocab.index[t], c) for t, c in review.counts.items() if t in vocab.index)
    return SparseExample(tuple(pairs), review.label, domain)


def to_matrix(examples: Sequence[SparseExample], width: int, log_counts: bool = False) -> sparse.csr_matrix:
    indptr = [0]
    indices: List[int] = []
    data: List[float] = []
    for example in examples:
        for feature_id, count in example.features:
            indices.append(feature_id)
            data.append(count)
        indptr.append(len(indices))
    values = np.asarray(data, dtype=np.float64)
    if log_counts:
        values = np.log1p(values)
    return sparse.csr_matrix(
        (values, np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(examples), width),
    )


def densify(examples: Sequence[SparseExample], width: int, log_counts: bool = False) -> np.ndarray:
    return to_matrix(examples, width, log_counts).toarray()


# ----------------------------------------------------------------------------
# Corpus directories
# ----------------------------------------------------------------------------

def discover_domains(data_dir: Path) -> List[str]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"data directory {data_dir} does not exist; {LAYOUT_HINT}")
    names = sorted(p.name for p in data_dir.iterdir() if (p / LABELED_FILES[0][0]).is_file())
    if len(names) < 2:
        raise ConfigError(f"found {len(names)} domain directories in {data_dir}; {LAYOUT_HINT}")
    return names


def load_corpus(
    data_dir: Path,
    domain_names: Optional[Sequence[str]] = None,
    vocab_size: int = 5000,
    log_counts: bool = False,
) -> MultiDomainDataset:
    """Read every domain directory, build the joint vocabulary and vectorize"""
    data_dir = Path(data_dir)
    names = list(domain_names) if domain_names else discover_domains(data_dir)

    raw: List[Tuple[List[RawReview], List[RawReview]]] = []
    for name in names:
        domain_dir = data_dir / name
        labeled: List[RawReview] = []
        for filename, label in LABELED_FILES:
            path = domain_dir / filename
            if not path.is_file():
                raise ConfigError(f"missing {path}; {LAYOUT_HINT}")
            labeled.extend(read_review_file(path, label))
        unlabeled_path = domain_dir / UNLABELED_FILE
        unlabeled = read_review_file(unlabeled_path) if unlabeled_path.is_file() else []
        logger.info(f"✓ Read domain '{name}': {len(labeled)} labeled, {len(unlabeled)} unlabeled")
        raw.append((labeled, unlabeled))

    vocab = build_vocabulary((r for labeled, unlabeled in raw for r in (*labeled, *unlabeled)), vocab_size)
    domains = []
    for i, (name, (labeled, unlabeled)) in enumerate(zip(names, raw)):
        labeled_examples = [vectorize(r, vocab, i) for r in labeled]
        unlabeled_examples = [vectorize(r, vocab, i) for r in unlabeled]
        domains.append(
            DomainData(
                name=name,
                labeled=to_matrix(labeled_examples, vocab.size, log_counts),
                labels=np.asarray([e.label for e in labeled_examples], dtype=np.int64),
                unlabeled=to_matrix(unlabeled_examples, vocab.size, log_counts),
            )
        )
    return MultiDomainDataset(domains, vocab.size, vocab)


def _format_signed_row(row: np.ndarray) -> str:
    # dimension j is written as id 2j (positive part) or 2j+1 (negative part)
    pairs = []
    for j, value in enumerate(row):
        if value > 0.0:
            pairs.append(f"{2 * j}:{value!r}")
        elif value < 0.0:
            pairs.append(f"{2 * j + 1}:{-value!r}")
    return " ".join(pairs)


def write_corpus(dataset: MultiDomainDataset, out_dir: Path):
    """Dump a dense dataset in the corpus directory layout"""
    out_dir = Path(out_dir)
    for domain in dataset.domains:
        domain_dir = out_dir / domain.name
        domain_dir.mkdir(parents=True, exist_ok=True)
        labeled = take_rows(domain.labeled, slice(None))
        for filename, label in LABELED_FILES:
            tag = "positive" if label == 1 else "negative"
            lines = [f"{_format_signed_row(row)} {LABEL_TOKEN}:{tag}\n" for row in labeled[domain.labels == label]]
            (domain_dir / filename).write_text("".join(lines), encoding="utf-8")
        unlabeled = take_rows(domain.unlabeled, slice(None))
        (domain_dir / UNLABELED_FILE).write_text("".join(f"{_format_signed_row(row)}\n" for row in unlabeled), encoding="utf-8")
    logger.info(f"✓ Wrote {dataset.num_domains} domain directories to {out_dir}")
