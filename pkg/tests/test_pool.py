import pytest
from hypothesis import given
from hypothesis import strategies as st

from genrec.errors import DuplicateItemError, InvalidInputError, InvalidStateError
from genrec.pool import (
    IterationRecord,
    PoolState,
    Question,
    add_questions,
    drop_worst,
    normalize_text,
    replay_active_ids,
)


def make_pool(texts, topic="Spray Bottles"):
    state = PoolState(topic=topic)
    for t in texts:
        add_questions(state, [state.new_question(t, "init")])
    return state


def test_ids_sequential():
    state = make_pool(["a?", "b?", "c?"])
    assert state.active_ids == ["q0001", "q0002", "q0003"]


@pytest.mark.parametrize(
    "a,b", [("What is it?", "what is it"), ("  What   is\tit? ", "What is it."), ("Eco!", "eco")]
)
def test_normalize_collisions(a, b):
    assert normalize_text(a) == normalize_text(b)


def test_duplicate_rejected_even_after_drop():
    state = make_pool(["Is it durable?", "Is it cheap?"])
    drop_worst(state, 1, {"q0001": 0.0, "q0002": 0.5})
    with pytest.raises(DuplicateItemError) as info:
        add_questions(state, [state.new_question("is it DURABLE", "refine")])
    assert info.value.existing_id == "q0001"


def test_add_is_atomic():
    state = make_pool(["one?"])
    batch = [Question("q0002", "two?", 0, "refine"), Question("q0003", "Two", 0, "refine")]
    with pytest.raises(DuplicateItemError):
        add_questions(state, batch)
    assert state.active_ids == ["q0001"] and len(state.questions) == 1


def test_drop_tie_break_oldest_then_id():
    state = make_pool(["a?", "b?"])
    state.iteration = 1
    add_questions(state, [state.new_question("c?", "refine")])
    drop_worst(state, 2, {"q0001": 0.1, "q0002": 0.1, "q0003": 0.1})
    assert state.active_ids == ["q0003"]


def test_drop_prefers_lowest_ctr():
    state = make_pool(["a?", "b?", "c?"])
    drop_worst(state, 1, {"q0001": 0.3, "q0002": 0.05, "q0003": 0.2})
    assert state.active_ids == ["q0001", "q0003"]
    assert not state.questions["q0002"].active


def test_drop_errors():
    state = make_pool(["a?"])
    with pytest.raises(InvalidInputError):
        drop_worst(state, 0, {"q0001": 0})
    with pytest.raises(InvalidStateError):
        drop_worst(state, 2, {"q0001": 0})
    with pytest.raises(InvalidStateError):
        drop_worst(state, 1, {})


def test_question_validation():
    with pytest.raises(InvalidInputError):
        Question("q", "   ", 0, "init")
    with pytest.raises(InvalidInputError):
        Question("q", "x" * 501, 0, "init")
    assert Question("q", " ".join("w" * 16), 0, "init").exceeds_word_limit(15)


def record(ids, iteration=0, s=10, k=2):
    imp = {q: 0 for q in ids}
    imp[ids[0]] = s * k
    return IterationRecord(iteration, s, k, list(ids), imp, {q: 0 for q in ids}, {q: 0.0 for q in ids}, 0.0)


def test_record_invariants():
    rec = record(["a", "b"])
    assert IterationRecord.from_dict(rec.to_dict()) == rec
    with pytest.raises(InvalidStateError):
        IterationRecord(0, 10, 2, ["a"], {"a": 5}, {"a": 0}, {"a": 0.0}, 0.0)
    with pytest.raises(InvalidStateError):
        IterationRecord(0, 1, 1, ["a"], {"a": 1}, {"a": 0}, {"a": 0.0}, 1.5)


def test_observe_checks_pool():
    state = make_pool(["a?", "b?"])
    with pytest.raises(InvalidStateError):
        state.observe(record(["q0001"]))
    with pytest.raises(InvalidStateError):
        state.observe(record(["q0001", "q0002"], iteration=3))
    state.observe(record(["q0001", "q0002"]))
    assert state.last_ctr == {"q0001": 0.0, "q0002": 0.0}


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 3)), max_size=30))
def test_event_log_replays_active_set(ops):
    state = make_pool([f"seed {i}?" for i in range(5)])
    counter = 0
    for add, n in ops:
        state.iteration += 1
        if add or len(state.active_ids) <= n:
            for _ in range(n):
                counter += 1
                add_questions(state, [state.new_question(f"new {counter}?", "refine")])
        else:
            drop_worst(state, n, {q: 0.0 for q in state.active_ids})
    assert replay_active_ids(state.events) == state.active_ids
    assert len(set(normalize_text(q.text) for q in state.all_questions)) == len(state.questions)
