import numpy as np
import pytest

from vlsatools.checkpoint import Checkpoint
from vlsatools.retrieval_eval import (
    absent_modalities,
    default_ks,
    evaluate,
    pair_similarity_summary,
    recall_at_k,
    similarity_matrix,
)
from vlsatools.trainer import build_model
from vlsatools.triplet_data import generate_synthetic


def _oracle_ranks(values):
    """Sort-based rank with ties placed ahead of the true item."""
    ranks = []
    for i, row in enumerate(values):
        others = [(-s, 0, j) for j, s in enumerate(row) if j != i]
        order = sorted(others + [(-row[i], 1, i)])
        ranks.append(1 + [j for _, _, j in order].index(i))
    return np.array(ranks)


def test_matches_sort_oracle(rng):
    for trial in range(50):
        # coarse values so that ties are common
        values = rng.integers(0, 4, size=(10, 10)) / 4.0
        ranks = _oracle_ranks(values)
        report = recall_at_k(values, [1, 2, 5, 10])
        assert np.array_equal(report.ranks, ranks)
        for k in (1, 2, 5, 10):
            assert report.recalls[k] == pytest.approx(100.0 * np.mean(ranks <= k))


def test_identity_matrix_is_perfect():
    report = recall_at_k(np.eye(5), [1, 5])
    assert report.recalls == {1: 100.0, 5: 100.0}


def test_constant_matrix_is_pessimistic():
    report = recall_at_k(np.full((6, 6), 0.3), [1, 5, 6])
    assert report.recalls == {1: 0.0, 5: 0.0, 6: 100.0}


def test_recall_monotone_in_k(rng):
    report = recall_at_k(rng.normal(size=(20, 20)), range(1, 21))
    values = [report.recalls[k] for k in report.ks]
    assert values == sorted(values)
    assert values[-1] == 100.0


def test_single_sample():
    report = recall_at_k(np.array([[0.1]]), [1, 5, 10])
    assert all(r == 100.0 for r in report.recalls.values())


def test_non_square_rejected():
    with pytest.raises(ValueError, match="square"):
        recall_at_k(np.zeros((3, 4)), [1])


def test_similarity_matrix_cosine(rng):
    q = rng.normal(size=(4, 3))
    sims = similarity_matrix(q, q * 2.5)
    np.testing.assert_allclose(np.diag(sims.values), 1.0)
    assert np.all(np.abs(sims.values) <= 1.0)
    assert sims.query_ids == [0, 1, 2, 3]


def test_similarity_matrix_zero_row():
    q = np.ones((3, 2))
    q[1] = 0.0
    with pytest.raises(ValueError, match="query row 1"):
        similarity_matrix(q, np.ones((3, 2)))


def test_default_ks():
    assert default_ks("t2a") == [1, 5, 10, 50]
    assert default_ks("a2t") == [1, 5, 10, 50]
    assert default_ks("t2v") == [1, 5, 10]
    assert default_ks("v2a") == [1, 5, 10]
    with pytest.raises(ValueError, match="t2v"):
        default_ks("t2x")


def test_absent_modalities():
    assert absent_modalities("t2v", "joint") == ()
    assert absent_modalities("t2v", "zero") == ("audio",)
    assert absent_modalities("a2v", "zero") == ("text",)


def test_report_record():
    report = recall_at_k(np.eye(3), [5, 1], direction="v2t")
    record = report.to_record()
    assert record["ks"] == [1, 5]
    assert record["recalls"] == {"1": 100.0, "5": 100.0}
    assert record["B"] == 3
    assert report.to_json() == recall_at_k(np.eye(3), [1, 5], direction="v2t").to_json()


def test_pair_similarity_summary(rng):
    g = rng.normal(size=(10, 4))
    summary = pair_similarity_summary(g, g, n_pairs=200, seed=1)
    assert summary["pos_mean"] == pytest.approx(1.0)
    assert summary["neg_mean"] < 1.0
    assert summary["separation"] > 0.0


def test_common_permutation_keeps_recalls(rng):
    values = rng.normal(size=(12, 12))
    values[np.arange(12), np.arange(12)] += rng.normal(0.5, 1.0, size=12)
    perm = rng.permutation(12)
    base = recall_at_k(values, [1, 2, 5])
    moved = recall_at_k(values[perm][:, perm], [1, 2, 5])
    assert moved.recalls == base.recalls
    assert np.array_equal(moved.ranks, base.ranks[perm])


def test_untrained_model_near_chance(tiny_config):
    data = generate_synthetic(
        100, 4, seed=3, mode="random", data_config=tiny_config.data
    )
    ckpt = Checkpoint.from_model(build_model(tiny_config, seed=0))
    for direction in ("t2v", "t2a"):
        report = evaluate(ckpt, data, direction, ks=[1])
        assert 0.0 <= report.recalls[1] <= 5.0
