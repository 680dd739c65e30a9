import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from havens import PageStore, SchemeKind, Uncorrectable, init_units
from havens.protection import (
    SignatureUnit,
    apply_writes,
    correct,
    detect,
    on_write,
    parity,
    rebuild,
    rolling_checksum,
    scrub_unit,
    vote,
)

U64 = st.integers(0, 2**64 - 1)


def w(*vals):
    return np.array(vals, dtype=np.uint64)


def fresh_unit(values):
    unit = SignatureUnit.empty(0, len(values))
    for i, v in enumerate(values):
        on_write(unit, i, 0, v, first_write=True)
    return unit


def xor_of(values):
    out = 0
    for v in values:
        out ^= int(v)
    return out


class TestUnits:
    def test_single_small_object(self):
        units = init_units([10], 4096)
        assert [(u.start, u.length) for u in units] == [(0, 10)]

    def test_ceiling_split(self):
        assert [u.length for u in init_units([10000], 4096)] == [4096, 4096, 1808]

    def test_objects_never_share_units(self):
        units = init_units([100, 200], 4096)
        assert [(u.start, u.length) for u in units] == [(0, 100), (100, 200)]

    def test_write_to_second_object_leaves_first_alone(self):
        store = PageStore(pages=4)
        h = store.create_haven(SchemeKind.PARITY)
        a = store.alloc(h, 100)
        b = store.alloc(h, 200)
        store.write(a, 0, np.arange(100, dtype=np.uint64))
        u0, u1 = store.protection(h).units
        before = (u0.S1, u0.S2, u0.updates, u0.D.copy())
        store.write(b, 0, np.arange(200, dtype=np.uint64) + np.uint64(7))
        assert (u0.S1, u0.S2, u0.updates) == before[:3]
        assert np.array_equal(u0.D, before[3])
        assert u1.updates == 200

    def test_detection_words_packing(self):
        unit = fresh_unit([1, 3, 7] + [0] * 63 + [1])
        packed = unit.detection_words()
        assert packed.shape == (2,)
        assert int(packed[0]) == 0b101
        assert int(packed[1]) == 0b100


class TestSignatures:
    def test_first_write(self):
        unit = SignatureUnit.empty(0, 4)
        on_write(unit, 0, 0, 0b1010, first_write=True)
        assert (unit.S1, unit.S2, bool(unit.D[0])) == (0b1010, 0, False)

    def test_update(self):
        unit = SignatureUnit.empty(0, 4)
        on_write(unit, 0, 0, 0b1010, first_write=True)
        on_write(unit, 0, 0b1010, 0b1001, first_write=False)
        assert unit.S2 == 0b0011
        assert unit.S1 ^ unit.S2 == 0b1001

    def test_three_fresh_words(self):
        unit = fresh_unit([0xA, 0xC, 0x3])
        assert (unit.S1, unit.S2) == (0x5, 0)

    def test_overwrite_keeps_identity(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.PARITY)
        obj = store.alloc(h, 8)
        store.write(obj, 2, w(0xA))
        assert store.protection(h).units[0].S1 == 0xA
        store.write(obj, 2, w(0xF))
        u = store.protection(h).units[0]
        assert u.S1 ^ u.S2 == xor_of(store.read(obj))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 15), st.lists(U64, min_size=1, max_size=8)), max_size=30))
    def test_vectorised_matches_scalar(self, writes):
        a = SignatureUnit.empty(0, 24)
        b = SignatureUnit.empty(0, 24)
        shadow = np.zeros(24, dtype=np.uint64)
        for off, vals in writes:
            new = w(*vals)
            old = shadow[off:off + len(new)].copy()
            for i, (o, n) in enumerate(zip(old, new)):
                on_write(a, off + i, o, n, first_write=not a.written[off + i])
            apply_writes(b, off, old, new)
            shadow[off:off + len(new)] = new
        assert (a.S1 ^ a.S2) == (b.S1 ^ b.S2) == xor_of(shadow)
        assert a.S1 == b.S1
        assert np.array_equal(a.D, b.D)
        assert np.array_equal(b.D, parity(shadow))


class TestDetectCorrect:
    def test_clean(self):
        vals = w(0xA, 0xC, 0x3)
        assert detect(fresh_unit(vals), vals) == []

    def test_single_flip_located(self):
        vals = w(0xA, 0xC, 0x3)
        unit = fresh_unit(vals)
        vals[1] ^= np.uint64(0x1)
        assert detect(unit, vals) == [1]

    def test_even_flip_invisible(self):
        vals = w(0xA, 0xC, 0x3)
        unit = fresh_unit(vals)
        vals[1] ^= np.uint64(0x3)
        assert detect(unit, vals) == []

    def test_correct_example(self):
        vals = w(0xA, 0xC, 0x3)
        unit = fresh_unit(vals)
        vals[1] = 0xD
        assert correct(unit, vals, 1) == 0x5 ^ 0xA ^ 0x3 == 0xC

    @given(U64, U64)
    def test_single_word_unit(self, value, mask):
        unit = fresh_unit([value])
        assert correct(unit, w(value ^ mask), 0) == unit.S1 ^ unit.S2 == value

    def test_all_odd_masks_on_one_word(self):
        base = w(0xA, 0xC, 0x3)
        unit = fresh_unit(base)
        for mask in range(1, 256):
            if not bin(mask).count("1") % 2:
                continue
            vals = base.copy()
            vals[1] ^= np.uint64(mask)
            assert detect(unit, vals) == [1]
            assert correct(unit, vals, 1) == 0xC
        vals = base.copy()
        vals[1] = 0x1D
        assert correct(unit, vals, 1) == 0xC

    def test_two_hits_uncorrectable(self):
        vals = w(0xA, 0xC, 0x3)
        unit = fresh_unit(vals)
        vals[0] ^= np.uint64(1)
        vals[2] ^= np.uint64(1)
        with pytest.raises(Uncorrectable):
            correct(unit, vals, 0)

    def test_correction_cost_is_linear(self):
        vals = np.arange(1000, dtype=np.uint64)
        unit = fresh_unit(vals)
        vals[500] ^= np.uint64(1 << 40)
        hits, value = scrub_unit(unit, vals)
        assert (hits, value) == ([500], 500)
        assert unit.parity_checks == 1000
        assert unit.xor_ops == 1000
        assert unit.words_touched == 999

    def test_rebuild(self):
        vals = w(5, 6, 7)
        unit = SignatureUnit.empty(0, 3)
        rebuild(unit, vals)
        assert unit.S1 ^ unit.S2 == 5 ^ 6 ^ 7
        assert detect(unit, vals) == []


@pytest.fixture
def parity_store():
    store = PageStore(pages=8)
    h = store.create_haven(SchemeKind.PARITY, unit_span=100)
    obj = store.alloc(h, 300)
    rng = np.random.default_rng(1)
    shadow = rng.integers(0, 2**64, 300, dtype=np.uint64)
    store.write(obj, 0, shadow)
    return store, h, obj, shadow


class TestScrub:
    def test_clean(self, parity_store):
        store, h, _, _ = parity_store
        rep = store.scrub(h)
        assert (rep.detected, rep.corrected, rep.uncorrectable) == ([], [], [])
        assert rep.scanned_words == 300

    def test_one_error_per_unit(self, parity_store):
        store, h, obj, shadow = parity_store
        for word, mask in ((5, 1), (150, 1 << 63), (299, 0b111)):
            store.xor_word(h, word, mask)
        rep = store.scrub(h)
        assert [c[:2] for c in rep.corrected] == [(0, 5), (1, 150), (2, 299)]
        assert np.array_equal(store.read(obj), shadow)
        assert store.scrub(h).clean

    def test_two_errors_in_one_unit(self, parity_store):
        store, h, obj, shadow = parity_store
        store.xor_word(h, 10, 1)
        store.xor_word(h, 20, 2)
        store.xor_word(h, 250, 4)
        rep = store.scrub(h)
        assert rep.uncorrectable == [(0, "2 corrupted words")]
        assert [c[:2] for c in rep.corrected] == [(2, 250)]
        got = store.read(obj)
        assert got[10] == shadow[10] ^ np.uint64(1)
        assert got[20] == shadow[20] ^ np.uint64(2)
        assert np.array_equal(got[100:], shadow[100:])

    def test_flip_twice_restores(self, parity_store):
        store, h, obj, shadow = parity_store
        store.xor_word(h, 42, 0xF0)
        store.xor_word(h, 42, 0xF0)
        assert store.scrub(h).clean
        store.xor_word(h, 0, 0)
        assert np.array_equal(store.read(obj), shadow)

    @settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.integers(0, 299), U64.filter(lambda m: bin(m).count("1") % 2 == 1))
    def test_scrub_idempotent(self, parity_store, word, mask):
        store, h, obj, shadow = parity_store
        store = store.clone()
        store.xor_word(h, word, mask)
        first = store.scrub(h)
        assert len(first.corrected) == 1 and not first.uncorrectable
        assert store.scrub(h).clean
        assert np.array_equal(store.read(obj), shadow)


class TestChecksum:
    def test_rotation_makes_order_matter(self):
        assert rolling_checksum(w(1, 2)) != rolling_checksum(w(2, 1))

    def test_detect_only(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.CHECKSUM, unit_span=16)
        obj = store.alloc(h, 40)
        store.write(obj, 0, np.arange(40, dtype=np.uint64))
        assert store.scrub(h).clean
        store.xor_word(h, 20, 1)
        rep = store.scrub(h)
        assert rep.detected and rep.uncorrectable and not rep.corrected

    def test_even_flip_detected(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.CHECKSUM)
        obj = store.alloc(h, 8)
        store.write(obj, 0, np.arange(8, dtype=np.uint64))
        store.xor_word(h, 3, 0b11)
        assert not store.scrub(h).clean


class TestReplication:
    def test_vote(self):
        value, ok, minority = vote(w(1, 1, 1, 5), w(1, 2, 1, 6), w(1, 1, 3, 7))
        assert value[:3].tolist() == [1, 1, 1]
        assert ok.tolist() == [True, True, True, False]
        assert minority.tolist() == [False, True, True, True]

    @pytest.mark.parametrize("copy", [0, 1, 2])
    def test_any_single_copy_corruption(self, copy):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.REPLICATION)
        obj = store.alloc(h, 10)
        vals = np.arange(100, 110, dtype=np.uint64)
        store.write(obj, 0, vals)
        for word in range(10):
            store.xor_word(h, copy * 10 + word, 0xDEAD)
            assert np.array_equal(store.read(obj), vals)
        assert store.scrub(h).clean

    def test_scrub_repairs(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.REPLICATION)
        obj = store.alloc(h, 10)
        store.write(obj, 0, np.arange(10, dtype=np.uint64))
        store.xor_word(h, 13, 1 << 7)
        rep = store.scrub(h)
        assert rep.corrected == [(0, 3, 3)]
        assert store.scrub(h).clean

    def test_two_copies_disagree(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.REPLICATION)
        obj = store.alloc(h, 10)
        store.write(obj, 0, np.arange(10, dtype=np.uint64))
        store.xor_word(h, 14, 1)
        store.xor_word(h, 24, 2)
        with pytest.raises(Uncorrectable):
            store.read(obj)
        assert store.scrub(h).uncorrectable

    def test_relaxed_writes_primary_then_rebuild(self):
        store = PageStore(pages=2)
        h = store.create_haven(SchemeKind.REPLICATION)
        obj = store.alloc(h, 4)
        store.set_protection(h, False)
        store.write(obj, 0, w(9, 8, 7, 6))
        store.set_protection(h, True)
        assert store.scrub(h).clean
        assert store.read(obj).tolist() == [9, 8, 7, 6]
