"""Smoke tests for the python bindings against the cmake-built module."""

import json

import numpy as np
import pytest

import graphsail as gs


def test_parse_and_split():
    log = gs.parse_interactions_text("a\tX\t5\nb\tY\t1\na\tY\t3\n")
    assert log.n_users == 2 and log.n_items == 2
    recs = log.records()
    assert recs.tolist() == [[1, 1, 1], [0, 1, 3], [0, 0, 5]]

    filtered = gs.preprocess(log, True, 0)
    assert len(filtered) == 3

    with pytest.raises(gs.DataError):
        gs.parse_interactions_text("")


def test_graph_and_sampling():
    recs = np.array([[0, 1, 0], [0, 2, 1], [1, 2, 2]], dtype=np.int64)
    g = gs.build_graph(recs, 2, 3)
    assert g.n_edges == 3
    assert g.degree("user", 0) == 2
    assert g.neighbors("item", 2) == [0, 1]
    sample = g.sample_neighbors("user", 0, 10, seed=4)
    assert len(sample) == 10
    assert set(sample) <= {1, 2}


def test_model_losses_and_recall():
    recs = np.array([[u, (u + k) % 6, u * 3 + k] for u in range(5) for k in range(3)],
                    dtype=np.int64)
    g = gs.build_graph(recs, 5, 6)
    model = gs.init_model(5, 6, 8, 1, seed=0)
    emb = gs.final_embeddings(model, g, n_sample=3, seed=1)
    assert emb.users.shape == (5, 8)

    loss, du, di, dj = gs.bpr_loss(emb.users[:2], emb.items[:2], emb.items[2:4], 0.0)
    assert loss >= 0.0 and du.shape == (2, 8)

    udeg = [1] * 5
    ideg = [1] * 6
    teacher = gs.make_teacher_snapshot(model, g, 2, 0.5, 7, udeg, ideg, n_sample=3)
    student = gs.final_embeddings(model, g, n_sample=3, seed=99)
    users = list(range(5))
    items = list(range(6))

    # the teacher's own embeddings give the zero-loss identity
    zero_loss, ugrads, _ = gs.self_distill_loss(teacher.embeddings, teacher, users, items)
    assert zero_loss == pytest.approx(0.0, abs=1e-12)
    assert all(np.allclose(v, 0.0) for v in ugrads.values())

    anchors = gs.compute_student_anchors(student, teacher)
    gl, _, _ = gs.global_distill_loss(student, teacher, anchors, 0.5, users, items)
    assert gl >= 0.0

    p = gs.anchor_distribution(np.ones(8), teacher.anchors_user, 0.5)
    assert sum(p) == pytest.approx(1.0, abs=1e-12)

    test = np.array([[0, 5, 0]], dtype=np.int64)
    r = gs.recall_at_k(emb, test, g, k=3)
    assert 0.0 <= r <= 1.0


def test_kmeans():
    pts = np.array([[0.0], [10.0]])
    assign, centroids, trace = gs.kmeans_cluster(pts, 2, seed=1)
    assert sorted(centroids.ravel().tolist()) == [0.0, 10.0]
    assert assign[0] != assign[1]
    assert trace[-1] == pytest.approx(0.0)


def test_run_experiment_end_to_end():
    config = {
        "dataset": {
            "synthetic": {
                "kind": "two_phase",
                "n_users": 30,
                "n_items": 60,
                "n_groups": 4,
                "base_per_user": 6,
                "inc_per_user": 6,
                "seed": 5,
            }
        },
        "split": {"base_frac": 0.55, "n_inc": 3},
        "model": {"dim": 8, "layers": 1, "n_sample": 3},
        "train": {
            "batch_size": 64,
            "max_epochs_base": 2,
            "max_epochs_inc": 1,
            "patience_base": 3,
            "n_neg": 2,
        },
        "distill": {"lambda_self": 1.0, "K": 3, "tau": 0.5},
        "methods": ["finetune", "graphsail"],
        "seeds": [0],
    }
    report = json.loads(gs.run_experiment(json.dumps(config), deterministic=True))
    assert report["n_transitions"] == 2
    assert set(report["summary"].keys()) == {"finetune", "graphsail"}
    runs = [r for r in report["runs"] if not r["failed"] and r["block"] >= 1]
    assert len(runs) == 4  # 2 methods x 2 transitions
    for r in runs:
        assert 0.0 <= r["test_recall"] <= 1.0
