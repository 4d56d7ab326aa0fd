import numpy as np
import pytest

from fewshot_mlc.episodes import SupportSet
from fewshot_mlc.labelrep import anchored_rep, compute_label_reps, prototype
from fewshot_mlc.rng import Rng

from helpers import make_domain, make_table


def _setting():
    """Two labels sharing one support item, plus one private item each."""
    domain = make_domain("d", {
        "s1": (["a"], {"A"}),
        "s2": (["b"], {"B"}),
        "s3": (["a", "b"], {"A", "B"}),
    }, label_names=["A", "B"])
    table = make_table(2, utterances={
        "s1": [[1.0, 0.0]],
        "s2": [[0.0, 1.0]],
        "s3": [[1.0, 1.0]],
    }, labels={
        "A": [[0.0, 2.0]],
        "B": [[2.0, 0.0]],
    })
    return domain, table


def test_prototype_single_item_is_its_embedding():
    domain, table = _setting()
    support = SupportSet(items=(domain.pool[0],), k=1)  # only s1, label A
    ls = make_domain("x", {"s1": (["a"], {"A"})}).label_space
    np.testing.assert_array_equal(prototype(0, support, ls, table), [1.0, 0.0])


def test_shared_support_collapses_prototypes():
    # The confusion case: labels whose supports coincide get identical
    # prototypes.
    domain, table = _setting()
    shared = SupportSet(items=(domain.pool[2],), k=1)  # s3 carries A and B
    pa = prototype(0, shared, domain.label_space, table)
    pb = prototype(1, shared, domain.label_space, table)
    np.testing.assert_array_equal(pa, pb)


def test_prototype_mean_matches_sum_oracle():
    rng = Rng(5)
    rows = {f"s{i}": [[rng.random() for _ in range(4)]] for i in range(3)}
    domain = make_domain("d", {k: (["t"], {"A"}) for k in rows}, label_names=["A"])
    table = make_table(4, utterances=rows, labels={"A": [[1, 0, 0, 0]]})
    support = SupportSet(items=tuple(domain.pool), k=3)
    oracle = np.zeros(4)
    for key in rows:
        oracle += np.asarray(rows[key][0])
    oracle /= 3.0
    np.testing.assert_allclose(
        prototype(0, support, domain.label_space, table), oracle, atol=1e-12)


def test_multilabel_item_contributes_to_all_its_prototypes():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    pa = prototype(0, support, domain.label_space, table)
    # A's members: s1 (1,0) and s3 (1,1) -> mean (1.0, 0.5)
    np.testing.assert_allclose(pa, [1.0, 0.5])


def test_prototype_missing_label_guarded():
    domain, table = _setting()
    support = SupportSet(items=(domain.pool[0],), k=1)  # only covers A
    with pytest.raises(ValueError, match="B"):
        prototype(1, support, domain.label_space, table)


def test_anchored_rep_endpoints_exact():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    proto = prototype(0, support, domain.label_space, table)
    at0 = anchored_rep(0, support, domain.label_space, table, beta=0.0)
    np.testing.assert_array_equal(at0, proto)
    at1 = anchored_rep(0, support, domain.label_space, table, beta=1.0)
    np.testing.assert_array_equal(at1, [0.0, 2.0])  # the anchor itself


def test_anchored_rep_midpoint():
    domain = make_domain("d", {"s": (["t"], {"A"})}, label_names=["A"])
    table = make_table(2, utterances={"s": [[0.0, 1.0]]}, labels={"A": [[1.0, 0.0]]})
    support = SupportSet(items=tuple(domain.pool), k=1)
    mid = anchored_rep(0, support, domain.label_space, table, beta=0.5)
    np.testing.assert_allclose(mid, [0.5, 0.5])


def test_anchored_rep_linear_in_beta():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    lo = anchored_rep(0, support, domain.label_space, table, beta=0.0)
    mid = anchored_rep(0, support, domain.label_space, table, beta=0.5)
    hi = anchored_rep(0, support, domain.label_space, table, beta=1.0)
    np.testing.assert_allclose(mid, (lo + hi) / 2.0, atol=1e-12)


def test_beta_out_of_range():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    with pytest.raises(ValueError):
        anchored_rep(0, support, domain.label_space, table, beta=1.5)


def test_shared_support_separation_distance():
    # Labels sharing all supports: anchored distance equals
    # beta * ||anchor difference||.
    domain, table = _setting()
    shared = SupportSet(items=(domain.pool[2],), k=1)
    anchors = {
        "A": np.array([0.0, 2.0]),
        "B": np.array([2.0, 0.0]),
    }
    for beta in (0.1, 0.5, 0.9):
        ra = anchored_rep(0, shared, domain.label_space, table, beta=beta)
        rb = anchored_rep(1, shared, domain.label_space, table, beta=beta)
        expected = beta * np.linalg.norm(anchors["A"] - anchors["B"])
        assert abs(np.linalg.norm(ra - rb) - expected) <= 1e-9


def test_projection_applied_to_anchor_and_prototype():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    proj = np.array([[2.0, 0.0], [0.0, 3.0]])
    rep = anchored_rep(0, support, domain.label_space, table, beta=0.5, proj=proj)
    raw_anchor = np.array([0.0, 2.0])
    raw_proto = prototype(0, support, domain.label_space, table)
    np.testing.assert_allclose(rep, 0.5 * proj @ raw_anchor + 0.5 * proj @ raw_proto)


def test_compute_label_reps_counts():
    domain, table = _setting()
    support = SupportSet(items=tuple(domain.pool), k=1)
    reps = compute_label_reps(support, domain.label_space, table, beta=0.5)
    assert reps.counts == (2, 2)  # s3 counts toward both labels
    assert reps.anchored.shape == (2, 2)
