"""Fixed-capacity exemplar replay buffer with pluggable selection strategies.

Selections are greedy, without replacement, and prefix-stable: the first k'
picks of a budget-k run equal a budget-k' run.  Ties break toward the lowest
candidate index.  Raw samples are stored (not embeddings) and re-embedded
with the current encoder at every session boundary.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .data.csvio import export_csv
from .errors import DomainError

STRATEGIES = ("baep", "herding", "random", "mixed")

# Mathematical ties (e.g. symmetric candidate sets) must resolve to the lowest
# index regardless of floating-point summation order, so "tied" means within a
# relative tolerance of the best score.
TIE_RTOL = 1e-9


def argbest(scores, indices, maximize):
    best = max(scores) if maximize else min(scores)
    tol = TIE_RTOL * max(1.0, abs(best))
    for score, index in zip(scores, indices):
        if (best - score if maximize else score - best) <= tol:
            return index
    raise AssertionError("unreachable")


def quota(capacity, n_classes_seen):
    """Per-class storage budget once n_classes_seen classes exist."""
    if n_classes_seen < 1:
        raise DomainError(f"class count must be >= 1, got {n_classes_seen}")
    return capacity // n_classes_seen


def baep_select(candidates, k):
    """Boundary-first greedy selection.

    Step k picks the candidate maximizing
    || phi(x) - mu + (1/k) * sum_{j<k} (phi(p_j) - mu) ||^2,
    the squared deviation from the class mean shifted by the running mean
    deviation of earlier picks.  The 1/k factor uses the step index.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim == 1:
        candidates = candidates[:, None]
    n = len(candidates)
    k = min(k, n)
    mu = candidates.mean(axis=0)
    deviations = candidates - mu
    selected = []
    remaining = list(range(n))
    correction = np.zeros(candidates.shape[1])
    for step in range(1, k + 1):
        scores = np.square(deviations[remaining] + correction / step).sum(axis=1)
        pick = argbest(scores, remaining, maximize=True)
        selected.append(pick)
        remaining.remove(pick)
        correction += deviations[pick]
    return selected


def herding_select(candidates, k):
    """Center-first greedy selection: each step minimizes the distance between
    the class mean and the mean of the selected set."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim == 1:
        candidates = candidates[:, None]
    n = len(candidates)
    k = min(k, n)
    mu = candidates.mean(axis=0)
    selected = []
    remaining = list(range(n))
    running_sum = np.zeros(candidates.shape[1])
    for step in range(1, k + 1):
        dists = np.square(mu - (running_sum + candidates[remaining]) / step).sum(axis=1)
        pick = argbest(dists, remaining, maximize=False)
        selected.append(pick)
        remaining.remove(pick)
        running_sum += candidates[pick]
    return selected


def random_select(n_candidates, k, rng):
    k = min(k, n_candidates)
    return list(rng.choice(n_candidates, size=k, replace=False))


def mixed_select(candidates, k, rng=None):
    """First ceil(k/2) picks by herding, the remainder by boundary-first
    selection over the untouched candidates (class mean from the full pool)."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim == 1:
        candidates = candidates[:, None]
    n = len(candidates)
    k = min(k, n)
    n_herd = -(-k // 2)
    herd = herding_select(candidates, n_herd)
    remaining = [i for i in range(n) if i not in herd]
    if not remaining or k == n_herd:
        return herd
    mu = candidates.mean(axis=0)
    deviations = candidates - mu
    selected = list(herd)
    correction = np.zeros(candidates.shape[1])
    for step in range(1, k - n_herd + 1):
        scores = np.square(deviations[remaining] + correction / step).sum(axis=1)
        pick = argbest(scores, remaining, maximize=True)
        selected.append(pick)
        remaining.remove(pick)
        correction += deviations[pick]
    return selected


def select(candidates, k, strategy, rng=None):
    if strategy == "baep":
        return baep_select(candidates, k)
    if strategy == "herding":
        return herding_select(candidates, k)
    if strategy == "random":
        if rng is None:
            raise DomainError("random strategy needs an rng")
        return random_select(len(candidates), k, rng)
    if strategy == "mixed":
        return mixed_select(candidates, k, rng)
    raise DomainError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass
class ExemplarMemory:
    capacity: int
    strategy: str = "baep"
    entries: dict = field(default_factory=dict)  # class id -> ordered list[SignalSample]

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")
        if self.capacity < 0:
            raise DomainError("capacity must be non-negative")

    @property
    def total_stored(self):
        return sum(len(v) for v in self.entries.values())

    def all_samples(self):
        out = []
        for class_id in sorted(self.entries):
            out.extend(self.entries[class_id])
        return out

    def check_capacity(self):
        if self.total_stored > self.capacity:
            raise DomainError(f"memory holds {self.total_stored} > capacity {self.capacity}")


def update_memory(mem, new_class_samples, embed_fn, n_classes_seen, rng=None):
    """Rebalance quotas for all stored classes and admit the new ones.

    new_class_samples: {class id -> list[SignalSample]} for classes joining now.
    embed_fn: maps a list of samples to an (N, d) embedding array using the
    just-trained encoder.
    """
    k = quota(mem.capacity, n_classes_seen)
    entries = {c: list(samples[:k]) for c, samples in mem.entries.items()}
    for class_id in sorted(new_class_samples):
        if class_id in entries:
            raise DomainError(f"class {class_id} already stored")
        samples = list(new_class_samples[class_id])
        if k == 0 or not samples:
            entries[class_id] = []
            continue
        embeddings = embed_fn(samples)
        order = select(embeddings, k, mem.strategy, rng=rng)
        entries[class_id] = [samples[i] for i in order]
    out = ExemplarMemory(capacity=mem.capacity, strategy=mem.strategy, entries=entries)
    out.check_capacity()
    return out


def export_snapshot(mem, csv_path, manifest_path):
    """Samples as windowed CSV plus a JSON manifest of the buffer layout."""
    samples = mem.all_samples()
    if samples:
        export_csv(samples, csv_path)
    manifest = {
        "capacity": mem.capacity,
        "strategy": mem.strategy,
        "per_class_quota": {str(c): len(v) for c, v in sorted(mem.entries.items())},
        "sample_ids": {str(c): [s.sample_id for s in v] for c, v in sorted(mem.entries.items())},
        "csv": csv_path if samples else None,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
