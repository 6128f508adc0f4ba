import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordrec.corpus import (
    CorpusConfig,
    OrderEvent,
    PurchaseSequence,
    build_vocab,
    filter_min_length,
    group_ordered,
    parse_orders,
    window_count,
    windowize,
    windowize_all,
)
from ordrec.errors import DataError


def _write(tmp_path, text):
    p = tmp_path / "orders.tsv"
    p.write_text(text)
    return p


def test_parse_orders_keeps_file_order(tmp_path):
    p = _write(tmp_path, "# header\nu2\t10\t7\nu1\t5\t3\n\nu1\t15\t9\n")
    events = parse_orders(p)
    assert events == [OrderEvent("u2", 10, 7), OrderEvent("u1", 5, 3), OrderEvent("u1", 15, 9)]


def test_parse_orders_cutoff(tmp_path):
    p = _write(tmp_path, "u\t5\t1\nu\t10\t2\nu\t15\t3\n")
    assert [e.timestamp for e in parse_orders(p, cutoff=10)] == [5, 10]


def test_parse_orders_rejects_padding_id(tmp_path):
    p = _write(tmp_path, "u\t5\t1\nu\t6\t0\n")
    with pytest.raises(DataError, match="line 2.*reserved padding id"):
        parse_orders(p)


@pytest.mark.parametrize("row", ["u\t5\n", "u\tx\t3\n", "u\t5\t3\textra\n", "\t5\t3\n"])
def test_parse_orders_malformed_row_names_line(tmp_path, row):
    p = _write(tmp_path, "u\t1\t1\n" + row)
    with pytest.raises(DataError, match="line 2"):
        parse_orders(p)


def test_parse_orders_empty_file(tmp_path):
    assert parse_orders(_write(tmp_path, "")) == []


def test_group_ordered_sorts_by_time():
    events = [OrderEvent("u", 3, 30), OrderEvent("u", 1, 10), OrderEvent("u", 2, 20)]
    assert group_ordered(events) == [PurchaseSequence("u", (10, 20, 30))]


def test_group_ordered_output_sorted_by_user():
    events = [OrderEvent("b", 1, 1), OrderEvent("a", 1, 2), OrderEvent("c", 1, 3)]
    assert [s.user_id for s in group_ordered(events)] == ["a", "b", "c"]


def test_group_ordered_ties_are_seeded():
    events = [OrderEvent("u", 1, a) for a in range(1, 9)]
    cfg = CorpusConfig(tie_break_seed=4)
    first = group_ordered(events, cfg)
    assert group_ordered(events, cfg) == first
    orders = {group_ordered(events, CorpusConfig(tie_break_seed=s))[0].items for s in range(10)}
    assert len(orders) > 1


def test_group_ordered_ties_stay_between_neighbours():
    events = [OrderEvent("u", 0, 100), OrderEvent("u", 5, 1), OrderEvent("u", 5, 2), OrderEvent("u", 5, 3),
              OrderEvent("u", 9, 200)]
    for seed in range(20):
        items = group_ordered(events, CorpusConfig(tie_break_seed=seed))[0].items
        assert items[0] == 100 and items[-1] == 200
        assert sorted(items[1:4]) == [1, 2, 3]


def test_group_ordered_duplicate_events_kept():
    events = [OrderEvent("u", 1, 5), OrderEvent("u", 1, 5), OrderEvent("u", 2, 6)]
    assert group_ordered(events)[0].items == (5, 5, 6)


def test_group_ordered_permutation_invariant_with_ties():
    rng = random.Random(0)
    events = [OrderEvent(f"u{rng.randrange(6)}", rng.randrange(8), rng.randrange(1, 12)) for _ in range(200)]
    ref = group_ordered(events, CorpusConfig(tie_break_seed=3))
    for _ in range(20):
        shuffled = events[:]
        rng.shuffle(shuffled)
        assert group_ordered(shuffled, CorpusConfig(tie_break_seed=3)) == ref


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 4), st.integers(1, 6)), min_size=1, max_size=40),
       st.randoms(use_true_random=False))
def test_group_ordered_permutation_property(rows, rnd):
    events = [OrderEvent(*r) for r in rows]
    shuffled = events[:]
    rnd.shuffle(shuffled)
    assert group_ordered(shuffled) == group_ordered(events)


def test_filter_min_length():
    a, ab = PurchaseSequence("x", (1,)), PurchaseSequence("y", (1, 2))
    assert filter_min_length([a, ab]) == [ab]
    assert filter_min_length([]) == []
    both = [ab, PurchaseSequence("z", (3, 4, 5))]
    assert filter_min_length(both) == both


def test_build_vocab_label_set():
    v = build_vocab([PurchaseSequence("A", (1, 2)), PurchaseSequence("B", (2, 3))])
    assert list(v.full_items) == [1, 2, 3]
    assert list(v.output_items) == [2, 3]
    assert list(build_vocab([PurchaseSequence("A", (4, 5, 6))]).output_items) == [5, 6]


def test_build_vocab_max_id_and_dense_indices():
    v = build_vocab([PurchaseSequence("A", (500000, 3)), PurchaseSequence("B", (7, 3))])
    assert v.max_item_id == 500000
    assert [v.full_index(i) for i in (3, 7, 500000)] == [0, 1, 2]
    assert v.output_index(3) == 0
    with pytest.raises(DataError):
        v.output_index(7)


def test_build_vocab_bijections_inverse_consistent():
    v = build_vocab([PurchaseSequence("A", (9, 4, 2, 11)), PurchaseSequence("B", (4, 9))])
    for k, item in enumerate(v.full_items):
        assert v.full_index(item) == k
    for k, item in enumerate(v.output_items):
        assert v.output_index(item) == k


def test_build_vocab_requires_labels():
    with pytest.raises(DataError, match="no trainable labels"):
        build_vocab([PurchaseSequence("A", (1,))])


def test_windowize_short_sequence_is_left_padded():
    (w,) = windowize(PurchaseSequence("u", (5, 6)), CorpusConfig())
    assert w.inputs == (0,) * 10 + (5,)
    assert w.label == 6 and w.window_index == 0


def test_windowize_full_length_boundary():
    (w,) = windowize(PurchaseSequence("u", tuple(range(1, 13))), CorpusConfig())
    assert w.inputs == tuple(range(1, 12)) and w.label == 12


def test_windowize_long_sequence_count():
    ws = windowize(PurchaseSequence("u", tuple(range(1, 16))), CorpusConfig())
    assert len(ws) == 4
    assert ws[-1].label == 15 and ws[-1].inputs[0] == 4


def test_windowize_rejects_single_item():
    with pytest.raises(DataError):
        windowize(PurchaseSequence("u", (1,)), CorpusConfig())


def test_windowize_drops_labels_outside_vocab():
    vocab = build_vocab([PurchaseSequence("A", (1, 2))])
    seq = PurchaseSequence("B", tuple([1, 2] * 7))
    ws, dropped = windowize_all([seq], CorpusConfig(), vocab)
    assert all(w.label == 2 for w in ws)
    assert dropped == window_count(14) - len(ws) == 1


@pytest.mark.parametrize("seq_len", [2, 3, 12])
def test_window_arithmetic_exhaustive(seq_len):
    cfg = CorpusConfig(seq_len=seq_len)
    for m in range(2, 41):
        items = tuple(range(1, m + 1))
        ws = windowize(PurchaseSequence("u", items), cfg)
        assert len(ws) == max(1, m - seq_len + 1)
        for w in ws:
            assert len(w.inputs) == seq_len - 1
            nz = np.flatnonzero(np.array(w.inputs))
            assert len(nz) >= 1 and np.all(nz == np.arange(nz[0], seq_len - 1))
        for a, b in zip(ws, ws[1:]):
            assert a.inputs[1:] + (a.label,) == b.inputs


def test_corpus_config_validates_seq_len():
    with pytest.raises(DataError):
        CorpusConfig(seq_len=1)
