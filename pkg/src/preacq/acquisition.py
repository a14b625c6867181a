"""Pool scoring by surrogate residual, normalization, and batch selection."""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import Candidate, Grid, LabeledSample, Trajectory
from .parallel import pmap
from .residual import trajectory_score
from .surrogate import RolloutError, rollout_values

log = logging.getLogger(__name__)

NORMALIZER_FLOOR = 1e-12
LOG_FLOOR = 1e-300


class PoolScore(NamedTuple):
    id: int
    raw_score: float
    failed: bool = False


@dataclass(frozen=True)
class ScoredCandidate:
    id: int
    raw_score: float
    normalizer: float
    normalized_score: float
    failed: bool = False


@dataclass(frozen=True)
class SelectionPolicy:
    tag: str = "topk"
    k: int = 8
    beta: float = 1.0
    seed: int = 0

    TAGS = ("topk", "sbal", "random")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ValueError(f"unknown policy {self.tag!r}; choose from {self.TAGS}")
        if self.k < 1:
            raise ValueError("batch size k must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def _score_one(candidate: Candidate, model, grid: Grid, weights) -> PoolScore:
    try:
        values, _ = rollout_values(model, candidate.ic_field.values, candidate.pde, grid.n_frames)
        s = trajectory_score(Trajectory(grid, values), candidate.pde, weights)
    except (RolloutError, FloatingPointError) as exc:
        log.info("candidate %d: rollout failed (%s); scoring as +inf", candidate.id, exc)
        return PoolScore(candidate.id, math.inf, True)
    return PoolScore(candidate.id, s, False)


def score_pool(model, pool: Sequence[Candidate], grid: Grid, weights=None, workers: int = 1) -> list[PoolScore]:
    """Roll the surrogate out from every candidate and take the mean absolute residual."""
    if not pool:
        raise ValueError("cannot score an empty pool")
    return pmap(functools.partial(_score_one, model=model, grid=grid, weights=weights), pool, workers)


def _standardize(delta: np.ndarray, ranges) -> np.ndarray:
    lo = np.array([r[0] for r in ranges], dtype=np.float64)
    hi = np.array([r[1] for r in ranges], dtype=np.float64)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (delta - lo) / span


def normalize(raw_scores: Sequence[PoolScore], training_set: Sequence[LabeledSample],
              pool: Sequence[Candidate], ranges, floor: float = NORMALIZER_FLOOR) -> list[ScoredCandidate]:
    """Divide each raw score by the cached truth score of the nearest training member.

    Distance is Euclidean over PDE coefficients after min-max scaling by ``ranges``;
    equal distances resolve to the lowest training id.
    """
    raw_scores = [s if isinstance(s, PoolScore) else PoolScore(*s) for s in raw_scores]
    if not training_set:
        log.warning("empty training set: normalization disabled")
        return [ScoredCandidate(s.id, s.raw_score, 1.0, s.raw_score, s.failed) for s in raw_scores]

    members = sorted(training_set, key=lambda m: m.id)
    train_delta = _standardize(np.stack([m.candidate.pde.vector for m in members]), ranges)
    truth = np.array([m.truth_score for m in members])
    by_id = {c.id: c for c in pool}

    out = []
    for s in raw_scores:
        d = _standardize(by_id[s.id].pde.vector, ranges)
        dist = np.sqrt(np.sum((train_delta - d) ** 2, axis=1))
        nearest = int(np.argmin(dist))  # first minimum = lowest id
        normalizer = max(float(truth[nearest]), floor)
        out.append(ScoredCandidate(s.id, s.raw_score, normalizer, s.raw_score / normalizer, s.failed))
    return out


def _pairs(scored) -> tuple[np.ndarray, np.ndarray]:
    ids, vals = [], []
    for s in scored:
        if isinstance(s, ScoredCandidate):
            ids.append(s.id)
            vals.append(s.normalized_score)
        else:
            ids.append(s[0])
            vals.append(s[1])
    return np.asarray(ids, dtype=np.int64), np.asarray(vals, dtype=np.float64)


def _check_k(k: int, n: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"cannot select {k} from a pool of {n}")


def select_topk(scored, k: int) -> list[int]:
    """Ids of the ``k`` largest scores; ties go to the lower id, ``+inf`` ranks first."""
    ids, vals = _pairs(scored)
    _check_k(k, len(ids))
    order = np.lexsort((ids, -vals))
    return [int(i) for i in ids[order[:k]]]


def select_sbal(scored, k: int, beta: float = 1.0, seed: int = 0) -> list[int]:
    """Stochastic batch selection: Gumbel-top-k over ``beta * log(score)``.

    Equivalent to sampling ``k`` ids without replacement with probability
    proportional to ``score ** beta``.
    """
    ids, vals = _pairs(scored)
    _check_k(k, len(ids))
    if not beta > 0:
        raise ValueError("beta must be positive")
    finite = np.isfinite(vals)
    logs = np.full(len(vals), 0.0)
    logs[finite] = beta * np.log(np.maximum(vals[finite], LOG_FLOOR))
    if (~finite).any():
        top = logs[finite].max() if finite.any() else 0.0
        logs[~finite] = top
    gumbel = np.random.default_rng(seed).gumbel(size=len(vals))
    keys = logs + gumbel
    order = np.lexsort((ids, -keys))
    return [int(i) for i in ids[order[:k]]]


def select_random(pool_ids, k: int, seed: int = 0) -> list[int]:
    ids = np.asarray([c.id if isinstance(c, Candidate) else c for c in pool_ids], dtype=np.int64)
    _check_k(k, len(ids))
    return [int(i) for i in np.random.default_rng(seed).choice(ids, size=k, replace=False)]


def write_score_dump(path, round_index: int, scored: Sequence[ScoredCandidate], pool: Sequence[Candidate],
                     selected, coefficient_names: Sequence[str]) -> None:
    """Append one round of scores; the header is written when the file is new or empty."""
    by_id = {c.id: c for c in pool}
    selected = set(selected)
    header = ["round", "candidate_id", *[f"delta_{n}" for n in coefficient_names],
              "raw_score", "normalizer", "normalized_score", "selected"]
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if fh.tell() == 0:
            w.writerow(header)
        for s in scored:
            w.writerow([round_index, s.id, *[repr(v) for v in by_id[s.id].pde.coefficients],
                        repr(s.raw_score), repr(s.normalizer), repr(s.normalized_score), int(s.id in selected)])
