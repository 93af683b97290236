import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import silhouette_score

from partnermas.cluster import (
    ProfileVector,
    cluster_profiles,
    diversity_report,
    hhi,
    kmeans_pp_init,
    normalized_hhi,
    profile_vectors,
    silhouette,
    sweep_k,
)


def blobs(seed=0, per=20, noise=0.2):
    rng = np.random.default_rng(seed)
    centres = np.array([[5.0, 0, 0, 1], [0, 5.0, 0, 1], [0, 0, 5.0, 1]])
    vecs = []
    for b, c in enumerate(centres):
        for i in range(per):
            vecs.append(ProfileVector(("r", f"case{b}", f"a{i}"), c + rng.normal(0, noise, 4)))
    return vecs


def test_hhi_values():
    assert hhi([3, 1]) == pytest.approx(0.625)
    assert normalized_hhi([3, 1]) == pytest.approx(0.25)
    assert normalized_hhi({"a": 2, "b": 2}) == 0.0
    assert normalized_hhi([5, 0]) == 1.0
    with pytest.raises(ValueError):
        hhi([0, 0])


@given(st.lists(st.integers(0, 50), min_size=1, max_size=10).filter(lambda c: sum(c) > 0))
def test_normalized_hhi_is_bounded(counts):
    assert 0.0 <= normalized_hhi(counts) <= 1.0


@pytest.mark.parametrize("seed", range(5))
def test_silhouette_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 5))
    labels = rng.integers(0, 4, size=30)
    assert silhouette(x, labels) == pytest.approx(silhouette_score(x, labels), abs=1e-9)


def test_silhouette_undefined_cases():
    x = np.eye(3)
    assert silhouette(x, [0, 0, 0]) is None
    assert silhouette(x, [0, 1, 2]) is None


def test_blobs_are_recovered_with_canonical_indices():
    vecs = blobs()
    model = cluster_profiles(vecs, k=3, seed=1)
    assert model.silhouette > 0.7 and not model.degenerate
    for b in range(3):
        assert len({model.assignments[v.key] for v in vecs if v.key[1] == f"case{b}"}) == 1
    assert sorted(model.counts().values()) == [20, 20, 20]


@settings(max_examples=10, deadline=None)
@given(st.randoms(use_true_random=False))
def test_input_order_does_not_matter(rnd):
    vecs = blobs(per=8, noise=0.5)
    shuffled = list(vecs)
    rnd.shuffle(shuffled)
    a, b = cluster_profiles(vecs, k=3, seed=4), cluster_profiles(shuffled, k=3, seed=4)
    assert a.assignments == b.assignments
    assert np.array_equal(a.centroids, b.centroids)


def test_identical_vectors_are_degenerate():
    vecs = [ProfileVector(("r", "c", f"a{i}"), np.ones(3)) for i in range(6)]
    model = cluster_profiles(vecs, k=3)
    assert model.degenerate and model.silhouette == 0.0


def test_cluster_input_validation():
    with pytest.raises(ValueError):
        cluster_profiles(blobs(per=1), k=1)
    with pytest.raises(ValueError):
        cluster_profiles(blobs(per=1), k=5)
    with pytest.raises(ValueError):
        cluster_profiles([ProfileVector(("r", "c", "a"), np.ones(2)), ProfileVector(("r", "c", "b"), np.ones(3))], k=2)
    with pytest.raises(ValueError):
        ProfileVector(("r", "c", "a"), np.array([np.nan]))


def test_kmeans_pp_picks_distinct_far_points():
    x = np.array([[0.0, 0], [0, 0.01], [10, 10], [10, 10.01]])
    centres = kmeans_pp_init(x, 2, np.random.default_rng(0))
    assert np.linalg.norm(centres[0] - centres[1]) > 10


def test_sweep_skips_unsupported_k():
    out = sweep_k(blobs(per=3), [1, 2, 3, 100])
    assert set(out) == {2, 3}


def _record(case, names, rate):
    bps = [{"name": n, "role": f"{n} role", "ability": "reads data", "profile": "text"} for n in names]
    return {"case_id": case, "record": {"planner": {"blueprints": bps}}, "result": {"match_rate": rate}}


def test_profile_vectors_and_diversity_report(tmp_path):
    records = [
        _record("A", ["Network Analyst", "Network Scout", "Geography Expert"], 50.0),
        _record("B", ["Geography Expert", "Stage Specialist"], 100.0),
        {"case_id": "S", "record": {}, "result": {"match_rate": 0.0}},
    ]
    vecs = profile_vectors(records, run="r1")
    assert [v.key for v in vecs][0] == ("r1", "A", "Network Analyst")
    assert len(vecs) == 5
    model = cluster_profiles(vecs, k=2, seed=0)
    rows = diversity_report(records, model, "r1")
    assert [r["case_id"] for r in rows] == ["A", "B"]
    assert rows[0]["specialists"] == 3 and rows[1]["match_rate"] == 100.0
    assert all(0 <= r["normalized_hhi"] <= 1 for r in rows)
    saved = model.save(tmp_path / "m.json")
    assert '"assignments"' in saved.read_text()
