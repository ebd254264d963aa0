"""Triplet ingestion, id remapping, dual sparse storage, and train/test splits.

Interaction data arrives as (user, item, count) triplets with opaque string
identifiers. This module remaps identifiers to contiguous integer indices,
stores the count matrix simultaneously in row-sparse and column-sparse form
(the trainer walks users by row and items by column), and produces the
entry-wise random holdout split used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DataMismatchError, ParseError


class RawTriplet(NamedTuple):
    """One parsed input record. Zero counts are rejected; zeros stay implicit."""

    user: str
    item: str
    count: float


class IdMap:
    """Bidirectional mapping between external tokens and contiguous indices.

    User and item tokens are mapped independently to the ranges [0, m) and
    [0, n). The mapping is bijective: every token owns exactly one index and
    every index in range owns exactly one token.
    """

    def __init__(self, user_tokens: Iterable[str], item_tokens: Iterable[str]):
        self._user_tokens = list(user_tokens)
        self._item_tokens = list(item_tokens)
        self._user_index = {tok: j for j, tok in enumerate(self._user_tokens)}
        self._item_index = {tok: j for j, tok in enumerate(self._item_tokens)}
        if len(self._user_index) != len(self._user_tokens):
            raise DataError("duplicate user tokens in id map")
        if len(self._item_index) != len(self._item_tokens):
            raise DataError("duplicate item tokens in id map")

    @property
    def n_users(self) -> int:
        return len(self._user_tokens)

    @property
    def n_items(self) -> int:
        return len(self._item_tokens)

    def user_index(self, token: str) -> int:
        """Internal index for a user token; unknown tokens are a data mismatch."""
        try:
            return self._user_index[token]
        except KeyError:
            raise DataMismatchError(f"unknown user id {token!r}") from None

    def item_index(self, token: str) -> int:
        """Internal index for an item token; unknown tokens are a data mismatch."""
        try:
            return self._item_index[token]
        except KeyError:
            raise DataMismatchError(f"unknown item id {token!r}") from None

    def has_user(self, token: str) -> bool:
        return token in self._user_index

    def has_item(self, token: str) -> bool:
        return token in self._item_index

    def user_token(self, index: int) -> str:
        return self._user_tokens[index]

    def item_token(self, index: int) -> str:
        return self._item_tokens[index]

    def save(self, users_path: str, items_path: str) -> None:
        """Persist both tables as two-column text (token, index), tab separated."""
        for path, tokens in ((users_path, self._user_tokens), (items_path, self._item_tokens)):
            with open(path, "w", encoding="utf-8") as fh:
                for j, tok in enumerate(tokens):
                    fh.write(f"{tok}\t{j}\n")

    @classmethod
    def load(cls, users_path: str, items_path: str) -> "IdMap":
        """Load tables written by :meth:`save`, checking contiguity."""
        tables = []
        for path in (users_path, items_path):
            pairs = []
            with open(path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    try:
                        tok, idx = line.split("\t")
                        pairs.append((tok, int(idx)))
                    except ValueError:
                        raise ParseError(f"bad id-map record in {path}", line_no) from None
            pairs.sort(key=lambda p: p[1])
            if [idx for _, idx in pairs] != list(range(len(pairs))):
                raise DataError(f"id map {path} has gaps or duplicate indices")
            tables.append([tok for tok, _ in pairs])
        return cls(tables[0], tables[1])


class SparseInteractions:
    """A user-item count matrix held in row-sparse and column-sparse form.

    Both views store exactly the same entries; within each row and column the
    indices are strictly increasing, and duplicate (u, i) pairs from the input
    are merged by summation before storage. The finished object is immutable
    and safe to read from any number of threads.

    Attributes
    ----------
    csr : scipy.sparse.csr_matrix
        Row view; ``csr.indptr``/``csr.indices``/``csr.data`` give per-user
        item lists.
    csc : scipy.sparse.csc_matrix
        Column view with identical entries.
    """

    def __init__(self, csr: sp.csr_matrix, csc: sp.csc_matrix):
        self.csr = csr
        self.csc = csc
        for view in (csr, csc):
            view.data.flags.writeable = False
            view.indices.flags.writeable = False
            view.indptr.flags.writeable = False

    @classmethod
    def from_entries(
        cls,
        users: np.ndarray,
        items: np.ndarray,
        counts: np.ndarray,
        m: int,
        n: int,
    ) -> "SparseInteractions":
        """Build from parallel index/count arrays with explicit dimensions.

        Duplicate (u, i) pairs are summed. Dimensions may exceed the largest
        index present, which leaves trailing empty rows or columns; an empty
        entry list yields an all-zero matrix of the given shape.
        """
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.float64)
        if not (len(users) == len(items) == len(counts)):
            raise ValueError("users, items, counts must have equal length")
        if len(counts) > 0:
            if counts.min() <= 0 or not np.isfinite(counts).all():
                raise ValueError("counts must be positive and finite")
            if users.min() < 0 or users.max() >= m or items.min() < 0 or items.max() >= n:
                raise ValueError("entry indices out of range for the given dimensions")
        csr = sp.coo_matrix((counts, (users, items)), shape=(m, n)).tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        csc = csr.tocsc()
        csc.sort_indices()
        return cls(csr, csc)

    @property
    def m(self) -> int:
        return self.csr.shape[0]

    @property
    def n(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """Item indices and counts of user u, indices strictly increasing."""
        lo, hi = self.csr.indptr[u], self.csr.indptr[u + 1]
        return self.csr.indices[lo:hi], self.csr.data[lo:hi]

    def col(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """User indices and counts of item i, indices strictly increasing."""
        lo, hi = self.csc.indptr[i], self.csc.indptr[i + 1]
        return self.csc.indices[lo:hi], self.csc.data[lo:hi]

    @property
    def row_degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    @property
    def col_degrees(self) -> np.ndarray:
        return np.diff(self.csc.indptr)

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All stored entries as (users, items, counts) in row-major order."""
        users = np.repeat(np.arange(self.m, dtype=np.int64), self.row_degrees)
        return users, self.csr.indices.astype(np.int64), self.csr.data

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseInteractions):
            return NotImplemented
        return (
            self.csr.shape == other.csr.shape
            and np.array_equal(self.csr.indptr, other.csr.indptr)
            and np.array_equal(self.csr.indices, other.csr.indices)
            and np.array_equal(self.csr.data, other.csr.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitPair:
    """An entry-wise train/test split.

    ``test`` holds (u, i, x) triplets for users that survive the filter rule:
    every test user also appears in train and has at least the configured
    number of test entries. Train and test never share a (u, i) pair.
    """

    train: SparseInteractions
    test: list[tuple[int, int, float]]


def parse_triplets(
    source: TextIO | Iterable[str],
    delimiter: str = ",",
    has_header: bool = False,
) -> list[RawTriplet]:
    """Parse a delimited character stream into raw triplets.

    Each line must carry at least three fields: user token, item token, and a
    positive count. Extra fields are ignored. Blank lines are skipped.
    Duplicate (user, item) pairs are preserved here and merged later by
    :func:`build_interactions`.

    Raises
    ------
    ParseError
        On a malformed line, an empty token, or a count that is not a
        positive finite number; the message carries the line number.
    """
    triplets = []
    for line_no, line in enumerate(source, start=1):
        if has_header and line_no == 1:
            continue
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split(delimiter)
        if len(fields) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(fields)}", line_no)
        user, item, raw_count = fields[0].strip(), fields[1].strip(), fields[2].strip()
        if not user:
            raise ParseError("empty user id", line_no)
        if not item:
            raise ParseError("empty item id", line_no)
        try:
            count = float(raw_count)
        except ValueError:
            raise ParseError(f"count is not a number: {raw_count!r}", line_no) from None
        if not np.isfinite(count):
            raise ParseError(f"count is not finite: {raw_count!r}", line_no)
        if count <= 0:
            raise ParseError(f"count must be positive, got {raw_count!r}", line_no)
        triplets.append(RawTriplet(user, item, count))
    return triplets


def build_interactions(triplets: list[RawTriplet]) -> tuple[SparseInteractions, IdMap]:
    """Assign contiguous ids in first-appearance order and build both views.

    Duplicate (user, item) pairs are merged by summing their counts.
    """
    if not triplets:
        raise DataError("empty dataset: no triplets to build from")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users = np.empty(len(triplets), dtype=np.int64)
    items = np.empty(len(triplets), dtype=np.int64)
    counts = np.empty(len(triplets), dtype=np.float64)
    for j, (user, item, count) in enumerate(triplets):
        users[j] = user_index.setdefault(user, len(user_index))
        items[j] = item_index.setdefault(item, len(item_index))
        counts[j] = count
    id_map = IdMap(user_index, item_index)
    data = SparseInteractions.from_entries(
        users, items, counts, id_map.n_users, id_map.n_items
    )
    return data, id_map


def split_train_test(
    data: SparseInteractions,
    test_fraction: float = 0.2,
    min_test_entries: int = 3,
    seed: int = 42,
) -> SplitPair:
    """Hold out each stored entry independently with probability test_fraction.

    After the Bernoulli assignment, test entries belonging to users that lost
    all their training entries or hold fewer than ``min_test_entries`` test
    entries are discarded entirely; they are not returned to train, so the
    training matrix depends only on the Bernoulli draw. The split is
    deterministic given the seed. Dimensions are preserved: users and items
    are not reindexed.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if min_test_entries < 1:
        raise ConfigError(f"min_test_entries must be >= 1, got {min_test_entries}")
    if not 0 <= seed < 2**63:
        raise ConfigError(f"seed must be a nonnegative 63-bit integer, got {seed}")
    users, items, counts = data.entries()
    rng = np.random.default_rng(seed)
    to_test = rng.random(data.nnz) < test_fraction
    if not to_test.any():
        return SplitPair(train=data, test=[])
    if to_test.all():
        raise DataError("split left no training entries; lower test_fraction")
    train_users = users[~to_test]
    user_in_train = np.bincount(train_users, minlength=data.m) > 0
    test_per_user = np.bincount(users[to_test], minlength=data.m)
    user_kept = user_in_train & (test_per_user >= min_test_entries)
    keep = to_test & user_kept[users]
    train = SparseInteractions.from_entries(
        train_users, items[~to_test], counts[~to_test], data.m, data.n
    )
    test = list(
        zip(
            users[keep].tolist(),
            items[keep].tolist(),
            counts[keep].tolist(),
        )
    )
    return SplitPair(train=train, test=test)


def write_triplet_file(
    path: str,
    entries: Iterable[tuple[int, int, float]],
    id_map: IdMap,
    delimiter: str = ",",
) -> None:
    """Write internal (u, i, x) entries as external-token triplet text.

    Counts are formatted with %.17g, which round-trips float64 exactly, so a
    written file re-parses to identical values.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, x in entries:
            fh.write(
                f"{id_map.user_token(u)}{delimiter}{id_map.item_token(i)}{delimiter}{x:.17g}\n"
            )


def read_triplet_file(
    path: str, delimiter: str = ",", has_header: bool = False
) -> list[RawTriplet]:
    """Parse a triplet file from disk; see :func:`parse_triplets`."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_triplets(fh, delimiter=delimiter, has_header=has_header)
