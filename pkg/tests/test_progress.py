import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidstate.progress import (
    Antichain,
    Capability,
    CapabilityError,
    ChangeBatch,
    Product,
    ProgressError,
    ProgressTracker,
    antichain_insert,
    capability_downgrade,
    frontier_passed,
    in_advance_of,
)

ints = st.integers(min_value=0, max_value=2**64 - 1)
products = st.builds(Product, st.integers(0, 6), st.integers(0, 6))


@pytest.mark.parametrize(
    "t, elements, expected",
    [(6, [5], True), (5, [5], True), (4, [5], False), (7, [], False)],
)
def test_in_advance_of(t, elements, expected):
    assert in_advance_of(t, Antichain(elements)) is expected


@pytest.mark.parametrize(
    "elements, t, expected",
    [([5], 6, {5}), ([5], 3, {3}), ([], 9, {9})],
)
def test_antichain_insert(elements, t, expected):
    before = Antichain(elements)
    after = antichain_insert(before, t)
    assert set(after.elements) == expected
    assert before == Antichain(elements)


def test_product_antichain_keeps_incomparable_elements():
    f = Antichain([Product(1, 3), Product(3, 1)])
    assert len(f) == 2
    f.insert(Product(2, 2))
    assert set(f) == {Product(1, 3), Product(3, 1), Product(2, 2)}
    f.insert(Product(1, 1))
    assert set(f) == {Product(1, 1)}
    assert in_advance_of(Product(1, 5), f)
    assert not in_advance_of(Product(0, 5), f)


def test_empty_frontier_has_passed_everything():
    assert frontier_passed(Antichain(), 0)
    assert not frontier_passed(Antichain([0]), 0)


def _updates(batch):
    return sorted((t, d) for _, t, d in batch.drain())


def test_downgrade_emits_paired_updates():
    changes = ChangeBatch()
    cap = Capability(42, 7, changes)
    changes.drain()
    capability_downgrade(cap, 45)
    assert cap.time == 45
    assert _updates(changes) == [(42, -1), (45, 1)]


def test_downgrade_to_same_time_is_identity():
    changes = ChangeBatch()
    cap = Capability(45, 7, changes)
    changes.drain()
    assert capability_downgrade(cap, 45) is cap
    assert changes.is_empty()


def test_backward_downgrade_fails_loudly():
    cap = Capability(45, 0, ChangeBatch())
    with pytest.raises(CapabilityError):
        capability_downgrade(cap, 44)


def test_dropped_capability_is_unusable():
    changes = ChangeBatch()
    cap = Capability(3, 0, changes)
    cap.drop()
    assert changes.is_empty()
    with pytest.raises(CapabilityError):
        cap.downgrade(4)
    with pytest.raises(CapabilityError):
        cap.delayed(9)


def test_incomparable_downgrade_rejected():
    cap = Capability(Product(1, 2), 0, ChangeBatch())
    with pytest.raises(CapabilityError):
        cap.downgrade(Product(2, 1))


# --- partial order laws ------------------------------------------------------


@given(ints, ints)
def test_int_order_antisymmetric(a, b):
    if a <= b and b <= a:
        assert a == b


@given(ints, ints, ints)
def test_int_order_transitive(a, b, c):
    if a <= b and b <= c:
        assert a <= c


@given(products, products, products)
def test_product_order_laws(a, b, c):
    assert a <= a
    if a <= b and b <= a:
        assert a == b
    if a <= b and b <= c:
        assert a <= c


@given(st.lists(products, max_size=12))
def test_antichain_elements_incomparable(items):
    f = Antichain(items)
    for x in f:
        for y in f:
            if x != y:
                assert not x <= y
    # every inserted item is in advance of the result, and nothing else was added
    for t in items:
        assert f.less_equal(t)
    assert set(f) <= set(items)


@given(st.lists(ints, min_size=1, max_size=20))
def test_int_antichain_is_minimum(items):
    assert Antichain(items).elements == (min(items),)


# --- tracker -------------------------------------------------------------------


def chain_tracker(*initial):
    # location 0: source output; location 1: downstream input fed by it
    tracker = ProgressTracker(2, {1: [0, 1]}, check_monotone=False)
    tracker.apply(initial)
    tracker.check_monotone = True
    return tracker


def test_single_source_downgrade_advances_downstream():
    tracker = chain_tracker((0, 0, 1))
    assert tracker.frontier(1) == Antichain([0])
    changed = tracker.apply([(0, 0, -1), (0, 10, 1)])
    assert changed == [(1, Antichain([10]))]


def test_slower_upstream_holds_frontier():
    # two workers' copies of one source share a logical location
    tracker = chain_tracker((0, 0, 2))
    tracker.apply([(0, 0, -1), (0, 45, 1)])
    tracker.apply([(0, 0, -1), (0, 53, 1)])
    assert tracker.frontier(1) == Antichain([45])
    tracker.apply([(0, 45, -1)])
    assert tracker.frontier(1) == Antichain([53])
    tracker.apply([(0, 53, -1)])
    assert tracker.frontier(1).is_empty()


def test_negative_count_waits_for_matching_increment():
    tracker = chain_tracker((0, 5, 1))
    # a consumption reported before the matching message
    assert tracker.apply([(1, 7, -1)]) == []
    assert tracker.frontier(1) == Antichain([5])
    tracker.apply([(1, 7, 1)])
    assert tracker.counts[1] == {}
    assert tracker.frontier(1) == Antichain([5])


def test_unknown_location_rejected():
    with pytest.raises(ProgressError):
        chain_tracker().apply([(2, 0, 1)])


def test_retreat_detected():
    tracker = chain_tracker((0, 10, 1))
    with pytest.raises(ProgressError):
        tracker.apply([(0, 3, 1)])


def test_no_change_reports_nothing():
    tracker = chain_tracker((0, 4, 1))
    assert tracker.apply([(0, 4, 1)]) == []
    assert tracker.apply([(0, 4, -1)]) == []


def random_dag(rng, n):
    preds = {j: [i for i in range(j) if rng.random() < 0.35] for j in range(n)}
    reach = {}
    for j in range(n):
        seen, stack = {j}, [j]
        while stack:
            for p in preds[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        reach[j] = sorted(seen)
    return reach


def brute_force_frontier(totals, sources):
    live = [t for s in sources for t, c in totals[s].items() if c > 0]
    return Antichain(live)


def legal_history(rng, reach, workers, length, make_time, bump):
    """Per-worker update batches from capability-like moves that never go back in time."""
    n = len(reach)
    downstream = {s: [t for t in reach if s in reach[t]] for s in range(n)}
    held = [[] for _ in range(workers)]
    initial = []
    for w in range(workers):
        loc, t = rng.randrange(n), make_time()
        held[w].append((loc, t))
        initial.append((loc, t, 1))
    batches = []
    for _ in range(length):
        w = rng.randrange(workers)
        if not held[w]:
            continue
        i = rng.randrange(len(held[w]))
        loc, t = held[w][i]
        kind = rng.random()
        batch = []
        if kind < 0.4:
            t2 = bump(t)
            held[w][i] = (loc, t2)
            batch = [(loc, t, -1), (loc, t2, 1)]
        elif kind < 0.7:
            target = rng.choice(downstream[loc])
            t2 = bump(t)
            held[w].append((target, t2))
            batch = [(target, t2, 1)]
        elif kind < 0.85:
            target = rng.choice(downstream[loc])
            t2 = bump(t)
            held[w][i] = (target, t2)
            batch = [(loc, t, -1), (target, t2, 1)]
        else:
            held[w].pop(i)
            batch = [(loc, t, -1)]
        batches.append((w, batch))
    return initial, batches


@pytest.mark.parametrize("kind", ["int", "product"])
@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), workers=st.integers(1, 4), length=st.integers(0, 100))
def test_tracker_matches_recomputation(kind, seed, n, workers, length):
    rng = random.Random(seed)
    reach = random_dag(rng, n)
    if kind == "int":
        make_time = lambda: rng.randrange(5)
        bump = lambda t: t + rng.randrange(3)
    else:
        make_time = lambda: Product(rng.randrange(3), rng.randrange(3))
        bump = lambda t: Product(t.outer + rng.randrange(2), t.inner + rng.randrange(2))
    initial, history = legal_history(rng, reach, workers, length, make_time, bump)
    # the initial capabilities are installed in one go, as a cluster does at start
    tracker = ProgressTracker(n, reach, check_monotone=False)
    tracker.apply(initial)
    tracker.check_monotone = True
    totals = [dict() for _ in range(n)]
    for loc, t, d in initial:
        totals[loc][t] = totals[loc].get(t, 0) + d
    previous = {loc: brute_force_frontier(totals, sources) for loc, sources in reach.items()}
    for _, batch in history:
        changed = dict(tracker.apply(batch))
        for loc, t, d in batch:
            totals[loc][t] = totals[loc].get(t, 0) + d
        for loc, sources in reach.items():
            expected = brute_force_frontier(totals, sources)
            assert tracker.frontier(loc) == expected
            assert (loc in changed) == (expected != previous[loc])
            previous[loc] = expected
