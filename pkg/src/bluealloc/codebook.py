"""Limited-feedback codebook design for gain vectors.

The fusion center and the sensors share a table of 2^bits candidate
squared-gain vectors. Distortion between two allocations is the absolute
difference of their energy figures (the L2 norm of the implied transmit
powers), so the quantizer effectively works on a scalar per vector: training
caches one cost per training vector and all assignment and update steps
operate on those cached scalars. The full vectors ride along only as
codeword payloads.

Training is a generalized Lloyd iteration: nearest-cost assignment, then a
medoid update per cell (the member whose cost is an empirical median is
exactly the in-cell distortion minimizer). Cells that come up empty are
reseeded with the worst-served training vector. Everything is deterministic
given the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import cost_j
from .errors import DimensionMismatch, EmptyCell, TooFewTrainingVectors

__all__ = [
    "TrainingSet",
    "Codebook",
    "gain_vector_cost",
    "word_distortion",
    "assign_cells",
    "centroid",
    "book_distortion",
    "train",
    "select_index",
    "select_index_by_cost",
    "save_codebook",
    "load_codebook",
]


@dataclass(frozen=True)
class TrainingSet:
    """Optimal squared-gain vectors harvested from solved snapshots.

    ``costs[m]`` is the energy figure of ``vectors[m]`` under the snapshot
    the vector was solved for; it is cached here so training never has to
    re-derive it.
    """

    vectors: np.ndarray
    costs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        costs = np.asarray(self.costs, dtype=float)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "costs", costs)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array (M x K)")
        if costs.shape != (vectors.shape[0],):
            raise ValueError(
                f"costs must have shape ({vectors.shape[0]},), got {costs.shape}"
            )
        if np.any(vectors < 0.0):
            raise ValueError("squared gains must be >= 0")
        if np.any(~np.isfinite(costs)) or np.any(costs < 0.0):
            raise ValueError("cached costs must be finite and >= 0")

    @property
    def m(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def k(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class Codebook:
    """A 2^bits table of squared-gain vectors plus their cached costs."""

    entries: np.ndarray
    bits: int
    cost_cache: np.ndarray | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if entries.ndim != 2 or entries.shape[0] != 2**self.bits:
            raise ValueError(
                f"entries must have shape (2^{self.bits}, K), got {entries.shape}"
            )
        if np.any(entries < 0.0):
            raise ValueError("squared gains must be >= 0")
        if self.cost_cache is not None:
            cache = np.asarray(self.cost_cache, dtype=float)
            object.__setattr__(self, "cost_cache", cache)
            if cache.shape != (entries.shape[0],):
                raise ValueError(
                    f"cost_cache must have shape ({entries.shape[0]},), got {cache.shape}"
                )

    @property
    def k(self) -> int:
        return int(self.entries.shape[1])

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])


def gain_vector_cost(a2, sigma_o2, beta) -> float:
    """Energy figure of a squared-gain vector under a given sensor context."""
    a2 = np.asarray(a2, dtype=float)
    sigma_o2 = np.asarray(sigma_o2, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not (a2.shape == sigma_o2.shape == beta.shape):
        raise DimensionMismatch(
            f"a2 {a2.shape}, sigma_o2 {sigma_o2.shape} and beta {beta.shape} "
            f"must have matching shapes"
        )
    return cost_j(a2 * sigma_o2 * (1.0 + beta))


def word_distortion(codeword, target, sigma_o2, beta) -> float:
    """Distortion |J(codeword) - J(target)| with both costs taken in context."""
    return abs(
        gain_vector_cost(codeword, sigma_o2, beta)
        - gain_vector_cost(target, sigma_o2, beta)
    )


def _distortion_matrix(book_costs: np.ndarray, training_costs: np.ndarray) -> np.ndarray:
    return np.abs(training_costs[:, None] - book_costs[None, :])


def assign_cells(book: Codebook, training: TrainingSet) -> np.ndarray:
    """Nearest-codeword partition of the training set (ties go to the lowest index)."""
    if book.cost_cache is None:
        raise ValueError("codebook has no cached costs; train or load one that does")
    if book.k != training.k:
        raise DimensionMismatch(
            f"codebook is for {book.k} sensors, training set for {training.k}"
        )
    return np.argmin(_distortion_matrix(book.cost_cache, training.costs), axis=1)


def centroid(vectors: np.ndarray, costs: np.ndarray) -> int:
    """Position of the distortion-minimizing member of one cell.

    Under absolute-cost-difference distortion the mean in-cell distortion is
    minimized by any member whose cost lies in the closed median interval of
    the cell's costs (for odd cells that interval collapses to the median
    itself). Ties resolve to the lowest position, so cells listed in
    ascending training order break ties toward the lowest training index.
    """
    costs = np.asarray(costs, dtype=float)
    n = costs.shape[0]
    if n == 0:
        raise EmptyCell("cannot pick a representative of an empty cell")
    ordered = np.sort(costs)
    lo = ordered[(n - 1) // 2]
    hi = ordered[n // 2]
    eligible = (costs >= lo) & (costs <= hi)
    return int(np.argmax(eligible))


def book_distortion(book: Codebook, training: TrainingSet) -> float:
    """Mean distortion of the training set under nearest-codeword coding."""
    if book.cost_cache is None:
        raise ValueError("codebook has no cached costs; train or load one that does")
    d = _distortion_matrix(book.cost_cache, training.costs).min(axis=1)
    return float(np.mean(d))


def _mean_min_distortion(book_costs: np.ndarray, training_costs: np.ndarray) -> float:
    return float(_distortion_matrix(book_costs, training_costs).min(axis=1).mean())


def train(
    training: TrainingSet,
    bits: int,
    epsilon: float,
    seed: int,
    max_iter: int = 500,
    extra_meta: dict | None = None,
) -> Codebook:
    """Generalized Lloyd design of a 2^bits codebook over the training set.

    Initial codewords are distinct training vectors drawn uniformly at
    random. Each round reassigns every vector to its nearest codeword by
    cached cost, reseeds empty cells with the worst-served vector, and
    replaces each codeword with its cell medoid. Stops when the distortion
    improvement drops to ``epsilon`` or below. The per-round distortion log
    lands in ``training_meta`` and is non-increasing.
    """
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    if not (epsilon > 0.0 and math.isfinite(epsilon)):
        raise ValueError(f"epsilon must be finite and > 0, got {epsilon!r}")
    size = 2**bits
    if training.m < size:
        raise TooFewTrainingVectors(
            f"need at least {size} training vectors for {bits} bits, "
            f"got {training.m}"
        )

    rng = np.random.default_rng(seed)
    rows = np.array(rng.choice(training.m, size=size, replace=False))
    costs = training.costs
    book_costs = costs[rows]

    log = [_mean_min_distortion(book_costs, costs)]
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        dist = _distortion_matrix(book_costs, costs)
        part = np.argmin(dist, axis=1)

        # reseed empty cells with the training vectors served worst
        for _repair_round in range(size):
            occupied = np.bincount(part, minlength=size) > 0
            empties = np.flatnonzero(~occupied)
            if empties.size == 0:
                break
            dmin = dist[np.arange(training.m), part]
            taken = set(rows.tolist())
            candidates = [m for m in np.argsort(-dmin, kind="stable") if m not in taken]
            if not candidates:
                break
            for cell, new_row in zip(empties, candidates):
                rows[cell] = new_row
            book_costs = costs[rows]
            dist = _distortion_matrix(book_costs, costs)
            part = np.argmin(dist, axis=1)

        for cell in range(size):
            members = np.flatnonzero(part == cell)
            if members.size == 0:
                continue
            rows[cell] = members[centroid(training.vectors[members], costs[members])]
        book_costs = costs[rows]

        log.append(_mean_min_distortion(book_costs, costs))
        if log[-2] - log[-1] <= epsilon:
            break

    meta = {
        "m": training.m,
        "epsilon": float(epsilon),
        "seed": int(seed),
        "iterations": iterations,
        "final_distortion": log[-1],
        "distortion_log": [float(v) for v in log],
        "source_rows": [int(v) for v in rows],
        "entry_costs": [float(v) for v in book_costs],
    }
    if extra_meta:
        meta.update(extra_meta)
    return Codebook(
        entries=training.vectors[rows].copy(),
        bits=bits,
        cost_cache=book_costs.copy(),
        training_meta=meta,
    )


def select_index_by_cost(book: Codebook, target_cost: float) -> int:
    """Index of the codeword whose cached cost is closest to ``target_cost``."""
    if book.cost_cache is None:
        raise ValueError(
            "codebook has no cached costs; pass a sensor context to select_index"
        )
    return int(np.argmin(np.abs(book.cost_cache - float(target_cost))))


def select_index(book: Codebook, optimal, sigma_o2=None, beta=None) -> int:
    """Feedback index for an optimal allocation: nearest codeword by cost.

    The optimal vector's cost is evaluated under the supplied sensor
    context. Codeword costs come from the book's cache when present (the
    cache is what the training partition used, so quantizing a training
    vector reproduces its training cell); otherwise they too are evaluated
    under the supplied context. Ties resolve to the lowest index.
    """
    optimal = np.asarray(optimal, dtype=float)
    if optimal.shape != (book.k,):
        raise DimensionMismatch(
            f"optimal vector has shape {optimal.shape}, codebook is for k={book.k}"
        )
    if sigma_o2 is None or beta is None:
        raise ValueError("select_index needs the sigma_o2 and beta context vectors")
    target_cost = gain_vector_cost(optimal, sigma_o2, beta)
    if book.cost_cache is not None:
        return select_index_by_cost(book, target_cost)
    entry_costs = np.array(
        [gain_vector_cost(row, sigma_o2, beta) for row in book.entries]
    )
    return int(np.argmin(np.abs(entry_costs - target_cost)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def to_dict(book: Codebook) -> dict:
    """JSON-ready form: {bits, k, entries, training_meta}.

    Floats serialize through Python's shortest round-trip repr, so reloading
    reproduces the exact same bit patterns.
    """
    meta = dict(book.training_meta)
    if book.cost_cache is not None and "entry_costs" not in meta:
        meta["entry_costs"] = [float(v) for v in book.cost_cache]
    return {
        "bits": int(book.bits),
        "k": int(book.k),
        "entries": [[float(v) for v in row] for row in book.entries],
        "training_meta": meta,
    }


def from_dict(doc: dict) -> Codebook:
    for key in ("bits", "k", "entries", "training_meta"):
        if key not in doc:
            raise ValueError(f"codebook document is missing the {key!r} field")
    entries = np.asarray(doc["entries"], dtype=float)
    bits = int(doc["bits"])
    if entries.ndim != 2 or entries.shape != (2**bits, int(doc["k"])):
        raise ValueError(
            f"entries must have shape (2^{bits}, {doc['k']}), got {entries.shape}"
        )
    meta = dict(doc["training_meta"])
    cache = meta.get("entry_costs")
    cost_cache = np.asarray(cache, dtype=float) if cache is not None else None
    return Codebook(entries=entries, bits=bits, cost_cache=cost_cache, training_meta=meta)


def save_codebook(book: Codebook, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(book), indent=2) + "\n")


def load_codebook(path: str | Path) -> Codebook:
    return from_dict(json.loads(Path(path).read_text()))
