import pytest

from factrank.kg import KGFormatError, KGStore, Triplet, load_triples, save_triples


def write(tmp_path, text, name="kg.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_dedup_and_id_assignment(tmp_path):
    p = write(tmp_path, "a\tr\tb\na\tr\tb\nc\ts\td\n")
    store = load_triples(p)
    assert len(store) == 2
    assert store.duplicates_dropped == 1
    assert store.get(0) == Triplet(0, "a", "r", "b")
    assert store.get(1) == Triplet(1, "c", "s", "d")


def test_empty_file(tmp_path):
    store = load_triples(write(tmp_path, ""))
    assert len(store) == 0
    assert store.duplicates_dropped == 0


def test_multiword_labels(tmp_path):
    p = write(tmp_path, "Normandy landings\tparticipant\tDwight D. Eisenhower\n")
    store = load_triples(p)
    t = store.get(0)
    assert (t.head, t.relation, t.tail) == (
        "Normandy landings", "participant", "Dwight D. Eisenhower")


def test_get_out_of_range(tmp_path):
    store = load_triples(write(tmp_path, "a\tr\tb\nc\ts\td\n"))
    with pytest.raises(KeyError):
        store.get(5)
    with pytest.raises(KeyError):
        store.get(-1)


def test_external_id_column(tmp_path):
    store = load_triples(write(tmp_path, "a\tr\tb\tQ42\nc\ts\td\n"))
    assert store.get(0).external_id == "Q42"
    assert store.get(1).external_id is None


def test_wrong_field_count_names_line(tmp_path):
    p = write(tmp_path, "a\tr\tb\nbad line\n")
    with pytest.raises(KGFormatError, match=":2"):
        load_triples(p)
    p = write(tmp_path, "a\tr\tb\tx\ty\n", name="kg2.tsv")
    with pytest.raises(KGFormatError, match=":1"):
        load_triples(p)


def test_empty_field_names_line(tmp_path):
    p = write(tmp_path, "a\tr\tb\n\t r\tb\n")
    with pytest.raises(KGFormatError, match=":2"):
        load_triples(p)


def test_whitespace_trimmed_before_dedup(tmp_path):
    store = load_triples(write(tmp_path, " a \tr\tb\na\t r \t b\n"))
    assert len(store) == 1
    assert store.get(0) == Triplet(0, "a", "r", "b")


def test_save_load_round_trip(tmp_path):
    p = write(tmp_path, "a\tr\tb\tQ1\nNormandy landings\tparticipant\tIke\n")
    store = load_triples(p)
    out = tmp_path / "out.tsv"
    save_triples(store, out)
    again = load_triples(out)
    assert list(again) == list(store)
    assert out.read_bytes() == p.read_bytes()


def test_iteration_order_is_id_order(tmp_path):
    store = load_triples(write(tmp_path, "c\ts\td\na\tr\tb\n"))
    assert [t.id for t in store] == [0, 1]
    assert store.get(0).head == "c"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path / "nope.tsv")
