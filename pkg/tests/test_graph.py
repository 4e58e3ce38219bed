import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pccd.graph import (MO, MU, SO, BipartiteGraph, GraphFormatError, build_cross_dataset,
                        load_edge_list, load_manifest, multi_hot, save_edge_list, sparsify)


def write(tmp_path, text, name="g.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_counts(tmp_path):
    g = load_edge_list(write(tmp_path, "a\tx\na\ty\nb\tx\n"), "main")
    assert (g.num_users, g.num_objects, g.num_links) == (2, 2, 3)
    assert g.user_ids == ("a", "b") and g.object_ids == ("x", "y")
    assert g.domain_tag == "main"


def test_duplicate_lines_aggregate(tmp_path):
    g = load_edge_list(write(tmp_path, "a\tx\na\tx\n"))
    assert g.links == ((0, 0, 2.0),)


def test_comments_and_weights(tmp_path):
    g = load_edge_list(write(tmp_path, "# header\na\tx\t2.5\n\nb\ty\n"))
    assert g.links == ((0, 0, 2.5), (1, 1, 1.0))


def test_non_positive_weight(tmp_path):
    with pytest.raises(GraphFormatError, match="non-positive weight at line 1"):
        load_edge_list(write(tmp_path, "a\tx\t-1\n"))


def test_malformed_line_reports_number(tmp_path):
    with pytest.raises(GraphFormatError, match="line 2"):
        load_edge_list(write(tmp_path, "a\tx\nbroken\n"))


def test_empty_file(tmp_path):
    with pytest.raises(GraphFormatError, match="empty"):
        load_edge_list(write(tmp_path, "# nothing\n"))


pairs = st.lists(st.tuples(st.sampled_from("abcdef"), st.sampled_from("uvwxyz"),
                           st.sampled_from([1.0, 0.5, 2.0, 3.25])), min_size=1, max_size=30)


@settings(max_examples=50, deadline=None)
@given(pairs)
def test_round_trip(tmp_path_factory, data):
    g = BipartiteGraph.from_pairs(data, "main")
    path = tmp_path_factory.mktemp("rt") / "g.tsv"
    save_edge_list(g, path)
    again = load_edge_list(path, "main")
    assert labelled(again) == labelled(g)
    assert set(again.user_ids) == set(g.user_ids) and again.domain_tag == g.domain_tag


def labelled(g):
    return {(g.user_ids[u], g.object_ids[o]): w for u, o, w in g.links}


def test_cross_dataset_types():
    main = BipartiteGraph.from_pairs([("a", "x"), ("b", "y")])
    sparse = BipartiteGraph.from_pairs([("b", "p"), ("c", "q")])
    ds = build_cross_dataset(main, sparse)
    assert ds.mutual_users == {"b"}
    assert ds.user_type == {"a": MO, "b": MU, "c": SO}


def test_identical_user_sets_all_mutual():
    main = BipartiteGraph.from_pairs([("a", "x"), ("b", "y")])
    sparse = BipartiteGraph.from_pairs([("b", "p"), ("a", "q")])
    ds = build_cross_dataset(main, sparse)
    assert set(ds.user_type.values()) == {MU}


def test_disjoint_users_warn(caplog):
    main = BipartiteGraph.from_pairs([("a", "x")])
    sparse = BipartiteGraph.from_pairs([("c", "q")])
    with caplog.at_level(logging.WARNING):
        ds = build_cross_dataset(main, sparse)
    assert ds.mutual_users == frozenset()
    assert "no mutual users" in caplog.text


def test_shared_object_ids_rejected():
    main = BipartiteGraph.from_pairs([("a", "x")])
    sparse = BipartiteGraph.from_pairs([("a", "x")])
    with pytest.raises(ValueError, match="shared"):
        build_cross_dataset(main, sparse)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("xy")), min_size=1, max_size=8),
       st.lists(st.tuples(st.sampled_from("cdef"), st.sampled_from("pq")), min_size=1, max_size=8))
def test_user_types_partition_all_users(main_pairs, sparse_pairs):
    ds = build_cross_dataset(BipartiteGraph.from_pairs(main_pairs), BipartiteGraph.from_pairs(sparse_pairs))
    users = set(ds.main.user_ids) | set(ds.sparse.user_ids)
    assert set(ds.user_type) == users
    assert sorted(ds.all_users()) == sorted(users)
    for u in users:
        assert (ds.user_type[u] == MU) == (u in ds.mutual_users)


def ten_links():
    return BipartiteGraph.from_pairs([(f"u{i % 4}", f"o{i}") for i in range(10)])


def test_sparsify_identity_and_count():
    g = ten_links()
    assert sparsify(g, 1.0, 3).links == g.links
    half = sparsify(g, 0.5, 3)
    assert half.num_links == 5
    assert half.user_ids == g.user_ids and half.object_ids == g.object_ids


@pytest.mark.parametrize("delta", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_sparsify_grid(delta):
    g = ten_links()
    out = sparsify(g, delta, 0)
    assert out.num_links == round(delta * 10)
    assert set(out.links) <= set(g.links)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.0), st.integers(0, 1000))
def test_sparsify_subset_and_deterministic(delta, seed):
    g = ten_links()
    a, b = sparsify(g, delta, seed), sparsify(g, delta, seed)
    assert a.links == b.links
    assert set(a.links) <= set(g.links)


@pytest.mark.parametrize("delta", [0.0, -0.1, 1.5])
def test_sparsify_rejects_bad_delta(delta):
    with pytest.raises(ValueError):
        sparsify(ten_links(), delta, 0)


def test_multi_hot():
    g = BipartiteGraph(("a", "b"), ("o0", "o1", "o2", "o3", "o4", "o5"),
                       ((0, 5, 1.0), (0, 2, 1.0), (1, 0, 1.0)))
    assert multi_hot(g, "a") == [(2, 1.0), (5, 1.0)]
    assert multi_hot(g, "zz") == []


def test_multi_hot_isolated_after_sparsify():
    g = BipartiteGraph.from_pairs([("a", "x"), ("b", "y")])
    kept = sparsify(g, 0.5, 0)
    lost = [u for u in g.user_ids if not multi_hot(kept, u)]
    assert len(lost) == 1 and kept.has_user(lost[0])


def test_load_manifest(tmp_path):
    write(tmp_path, "a\tx\nb\tx\n", "main.tsv")
    write(tmp_path, "b\tp\nc\tq\n", "sparse.tsv")
    write(tmp_path, "a\t0\nb\t0\nc\t1\n", "truth.tsv")
    write(tmp_path, '{"main": "main.tsv", "sparse": "sparse.tsv", "truth": "truth.tsv"}', "manifest.json")
    ds, truth, _ = load_manifest(tmp_path)
    assert ds.mutual_users == {"b"}
    assert truth == {"a": "0", "b": "0", "c": "1"}
