import json

import numpy as np
import pytest

from dualgrain.data import SignalSample
from dualgrain.errors import DomainError
from dualgrain.memory import (
    ExemplarMemory,
    baep_select,
    export_snapshot,
    herding_select,
    mixed_select,
    quota,
    random_select,
    update_memory,
)


def _pick(scores, maximize):
    """Lowest index among scores tied (to relative 1e-9) with the best."""
    best = max(scores.values()) if maximize else min(scores.values())
    tol = 1e-9 * max(1.0, abs(best))
    for i in sorted(scores):
        if (best - scores[i] if maximize else scores[i] - best) <= tol:
            return i
    raise AssertionError("unreachable")


def baep_oracle(cands, k):
    """Brute-force greedy: step k maximizes ||(x - mu) + (1/k) sum_{j<k} (p_j - mu)||^2."""
    cands = np.atleast_2d(np.asarray(cands, float).T).T if np.asarray(cands).ndim == 1 else np.asarray(cands, float)
    mu = cands.mean(0)
    chosen, remaining = [], list(range(len(cands)))
    for step in range(1, min(k, len(cands)) + 1):
        corr = sum(cands[j] - mu for j in chosen) / step if chosen else np.zeros_like(mu)
        scores = {i: float(np.sum((cands[i] - mu + corr) ** 2)) for i in remaining}
        best = _pick(scores, maximize=True)
        chosen.append(best)
        remaining.remove(best)
    return chosen


def herding_oracle(cands, k):
    """Brute-force greedy: step k minimizes ||mu - mean(selected + {x})||."""
    cands = np.atleast_2d(np.asarray(cands, float).T).T if np.asarray(cands).ndim == 1 else np.asarray(cands, float)
    mu = cands.mean(0)
    chosen, remaining = [], list(range(len(cands)))
    for step in range(1, min(k, len(cands)) + 1):
        scores = {
            i: float(np.sum((mu - (sum(cands[j] for j in chosen) + cands[i]) / step) ** 2)) for i in remaining
        }
        best = _pick(scores, maximize=False)
        chosen.append(best)
        remaining.remove(best)
    return chosen


# ---------------------------------------------------------------------------
# quota


def test_quota_worked_values():
    assert quota(100, 4) == 25
    assert quota(40, 40) == 1
    assert quota(10, 3) == 3


def test_quota_matches_floor_everywhere():
    for capacity in range(1, 201):
        for t in range(1, capacity + 1):
            assert quota(capacity, t) == capacity // t


def test_quota_rejects_zero_classes():
    with pytest.raises(DomainError):
        quota(10, 0)


# ---------------------------------------------------------------------------
# selection strategies


def test_baep_first_pick_is_farthest_from_mean():
    assert baep_select([0.0, 1.0, 5.0], 1) == [2]  # mean 2, farthest is 5


def test_baep_worked_example_matches_oracle():
    cands = [-4.0, 0.0, 1.0, 5.0]
    expected = baep_oracle(cands, 2)
    assert expected == [0, 1]  # -4 first (tie to lowest index), then 0: (0-2.75)^2 > (5-2.75)^2
    assert baep_select(cands, 2) == expected


def test_baep_identical_candidates_tie_break_ascending():
    assert baep_select(np.ones((4, 2)), 3) == [0, 1, 2]


def test_herding_first_pick_nearest_mean_with_tie_break():
    # mean of {-4, 0, 1, 5} is 0.5; values 0 and 1 are equidistant, lowest index wins
    assert herding_select([-4.0, 0.0, 1.0, 5.0], 1) == [1]
    assert herding_oracle([-4.0, 0.0, 1.0, 5.0], 1) == [1]


def test_selection_matches_bruteforce_oracles_on_random_sets():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(1, n + 1))
        cands = rng.normal(size=(n, d))
        assert baep_select(cands, k) == baep_oracle(cands, k), f"baep trial {trial}"
        assert herding_select(cands, k) == herding_oracle(cands, k), f"herding trial {trial}"


def test_selection_prefix_property():
    rng = np.random.default_rng(1)
    for _ in range(30):
        cands = rng.normal(size=(12, 3))
        for selector in (baep_select, herding_select):
            full = selector(cands, 8)
            for k in range(1, 8):
                assert selector(cands, k) == full[:k]


def test_selection_handles_k_exceeding_pool():
    cands = np.random.default_rng(2).normal(size=(3, 2))
    assert sorted(baep_select(cands, 10)) == [0, 1, 2]
    assert sorted(herding_select(cands, 10)) == [0, 1, 2]


def test_mixed_strategy_composition():
    rng = np.random.default_rng(3)
    cands = rng.normal(size=(10, 2))
    k = 5
    picks = mixed_select(cands, k)
    n_herd = 3  # ceil(5/2)
    assert picks[:n_herd] == herding_oracle(cands, n_herd)
    assert len(picks) == k
    assert len(set(picks)) == k
    # the tail picks maximize the boundary criterion over the untouched pool
    mu = cands.mean(0)
    chosen = picks[:n_herd]
    remaining = [i for i in range(10) if i not in chosen]
    corr = np.zeros(2)
    for step, pick in enumerate(picks[n_herd:], start=1):
        scores = {i: float(np.sum((cands[i] - mu + corr / step) ** 2)) for i in remaining}
        assert pick == _pick(scores, maximize=True)
        remaining.remove(pick)
        corr += cands[pick] - mu


def test_random_select_without_replacement():
    rng = np.random.default_rng(4)
    picks = random_select(10, 6, rng)
    assert len(picks) == len(set(picks)) == 6
    assert random_select(3, 9, rng) is not None  # clamps to pool size


def test_selection_determinism():
    cands = np.random.default_rng(5).normal(size=(15, 4))
    assert baep_select(cands, 6) == baep_select(cands.copy(), 6)
    assert herding_select(cands, 6) == herding_select(cands.copy(), 6)


# ---------------------------------------------------------------------------
# memory updates


def _samples(class_id, count, length=6):
    rng = np.random.default_rng(class_id)
    return [
        SignalSample(values=rng.normal(size=(2, length)), label=class_id, sample_id=class_id * 1000 + i)
        for i in range(count)
    ]


def _mean_embed(samples):
    return np.stack([s.values.mean(axis=1) for s in samples])


def test_update_first_session_splits_capacity():
    mem = ExemplarMemory(capacity=100, strategy="baep")
    mem = update_memory(mem, {0: _samples(0, 60), 1: _samples(1, 60)}, _mean_embed, n_classes_seen=2)
    assert {c: len(v) for c, v in mem.entries.items()} == {0: 50, 1: 50}


def test_update_truncates_old_classes_to_prefix():
    mem = ExemplarMemory(capacity=100, strategy="herding")
    mem = update_memory(mem, {0: _samples(0, 60), 1: _samples(1, 60)}, _mean_embed, n_classes_seen=2)
    first_prefix = {c: [s.sample_id for s in v[:10]] for c, v in mem.entries.items()}
    new = {c: _samples(c, 30) for c in range(2, 10)}
    mem = update_memory(mem, new, _mean_embed, n_classes_seen=10)
    assert all(len(v) == 10 for v in mem.entries.values())
    assert [s.sample_id for s in mem.entries[0]] == first_prefix[0]
    assert [s.sample_id for s in mem.entries[1]] == first_prefix[1]
    assert mem.total_stored == 100


def test_capacity_bound_over_randomized_runs():
    rng = np.random.default_rng(7)
    for trial in range(10):
        capacity = int(rng.integers(5, 60))
        strategy = ("baep", "herding", "random", "mixed")[trial % 4]
        mem = ExemplarMemory(capacity=capacity, strategy=strategy)
        seen = 0
        for session in range(5):
            new = {}
            for _ in range(int(rng.integers(1, 4))):
                class_id = seen
                seen += 1
                new[class_id] = _samples(class_id, int(rng.integers(1, 40)))
            mem = update_memory(mem, new, _mean_embed, n_classes_seen=seen, rng=rng)
            assert mem.total_stored <= capacity
            assert all(len(v) <= quota(capacity, seen) for v in mem.entries.values())


def test_update_determinism_for_deterministic_strategies():
    runs = []
    for _ in range(2):
        mem = ExemplarMemory(capacity=40, strategy="baep")
        mem = update_memory(mem, {0: _samples(0, 30), 1: _samples(1, 30)}, _mean_embed, n_classes_seen=2)
        runs.append({c: [s.sample_id for s in v] for c, v in mem.entries.items()})
    assert runs[0] == runs[1]


def test_export_snapshot(tmp_path):
    mem = ExemplarMemory(capacity=10, strategy="mixed")
    mem = update_memory(mem, {0: _samples(0, 8), 1: _samples(1, 8)}, _mean_embed, n_classes_seen=2)
    manifest = export_snapshot(mem, str(tmp_path / "mem.csv"), str(tmp_path / "mem.json"))
    assert manifest["strategy"] == "mixed"
    assert manifest["per_class_quota"] == {"0": 5, "1": 5}
    on_disk = json.loads((tmp_path / "mem.json").read_text())
    assert on_disk["sample_ids"]["0"] == [s.sample_id for s in mem.entries[0]]
    assert (tmp_path / "mem.csv").exists()
