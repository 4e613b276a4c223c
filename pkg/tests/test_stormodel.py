import random

import pytest

from randscan.stormodel import (
    DIFFERENT,
    EQUAL,
    INDETERMINATE,
    StorageModel,
    flatten_key,
    keys_equal,
    retain_tainted,
    retained_fingerprint,
)
from randscan.values import TaintSource, ValueFactory


@pytest.fixture
def factory():
    return ValueFactory()


def _tainted(factory, kind="TIMESTAMP", pc=0, run=1):
    return factory.make(kind, extra_taints=[TaintSource(kind, pc, run)], pc=pc)


def _sha3_key(factory, caller_slot: int):
    """keccak(CALLER ++ slot) the way mapping keys are derived."""
    return factory.make("SHA3", (factory.make("CALLER"), factory.const(caller_slot)))


# -- flattening -------------------------------------------------------------------


def test_constants_fold_into_single_term(factory):
    key = factory.make("ADD", (factory.const(3), factory.const(5)))
    poly = flatten_key(key)
    assert poly.const == 8
    assert poly.opaque == ()


def test_hash_plus_constants_flatten(factory):
    key = factory.make(
        "ADD",
        (_sha3_key(factory, 0), factory.make("ADD", (factory.const(3), factory.const(5)))),
    )
    poly = flatten_key(key)
    assert poly.const == 8
    assert len(poly.opaque) == 1
    assert poly.opaque[0][0] == "SHA3"


def test_single_constant_key(factory):
    poly = flatten_key(factory.const(7))
    assert poly.canonical() == (7, ())


def test_constant_folding_wraps_modulo_word(factory):
    key = factory.make("ADD", (factory.const((1 << 256) - 1), factory.const(2)))
    assert flatten_key(key).const == 1


# -- comparison -------------------------------------------------------------------


def test_identical_polynomials_equal(factory):
    k1 = factory.make("ADD", (_sha3_key(factory, 0), factory.const(8)))
    k2 = factory.make("ADD", (_sha3_key(factory, 0), factory.const(8)))
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == EQUAL


def test_mapping_keys_with_distinct_slots_differ(factory):
    # keccak(CALLER ++ 0) + 8 vs keccak(CALLER ++ 1) + 8
    k1 = factory.make("ADD", (_sha3_key(factory, 0), factory.const(8)))
    k2 = factory.make("ADD", (_sha3_key(factory, 1), factory.const(8)))
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == DIFFERENT


def test_distinct_constants_differ(factory):
    assert keys_equal(flatten_key(factory.const(8)), flatten_key(factory.const(9))) == DIFFERENT


def test_same_hash_distinct_offsets_differ(factory):
    k1 = factory.make("ADD", (_sha3_key(factory, 0), factory.const(1)))
    k2 = factory.make("ADD", (_sha3_key(factory, 0), factory.const(2)))
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == DIFFERENT


def test_run_varying_terms_never_equal(factory):
    k1 = factory.make("ADD", (factory.make("GAS"), factory.const(1)))
    k2 = factory.make("ADD", (factory.make("GAS"), factory.const(1)))
    assert keys_equal(flatten_key(k1), flatten_key(k1)) == INDETERMINATE
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == INDETERMINATE


def test_pc_term_indeterminate_even_when_syntactically_apart(factory):
    k1 = factory.make("ADD", (factory.make("PC"), factory.const(1)))
    k2 = factory.const(9)
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == INDETERMINATE


def test_opaque_env_terms_compare_structurally(factory):
    k1 = factory.make("CALLER")
    k2 = factory.make("CALLER")
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == EQUAL


def test_unknown_leaves_block_difference_proofs(factory):
    u1, u2 = factory.unknown(), factory.unknown()
    k1 = factory.make("SHA3", (u1,))
    k2 = factory.make("SHA3", (u2,))
    assert keys_equal(flatten_key(k1), flatten_key(k2)) == INDETERMINATE


def test_comparison_is_symmetric_and_reflexive(factory):
    keys = [
        flatten_key(factory.const(5)),
        flatten_key(factory.make("ADD", (_sha3_key(factory, 0), factory.const(5)))),
        flatten_key(factory.make("CALLER")),
        flatten_key(factory.make("ADD", (factory.make("GAS"), factory.const(2)))),
    ]
    for p in keys:
        if not p.has_run_varying:
            assert keys_equal(p, p) == EQUAL
    for p1 in keys:
        for p2 in keys:
            assert keys_equal(p1, p2) == keys_equal(p2, p1)


# -- the log ---------------------------------------------------------------------


def test_overwrite_later_store_wins(factory):
    store = StorageModel(factory)
    v = factory.const(1)
    w = factory.const(2)
    store.on_sstore(factory.const(0), v, pc=1, run_index=1)
    store.on_sstore(factory.const(0), w, pc=2, run_index=1)
    assert len(store.entries) == 2  # both kept in the log
    loaded = store.on_sload(factory.const(0), pc=3)
    assert loaded.concrete == 2


def test_tainted_store_read_back_carries_taints(factory):
    store = StorageModel(factory)
    v = _tainted(factory)
    store.on_sstore(factory.const(0), v, pc=1, run_index=1)
    loaded = store.on_sload(factory.const(0), pc=2)
    assert loaded.taints == v.taints


def test_load_of_distinct_constant_key_is_fresh_unknown(factory):
    store = StorageModel(factory)
    store.on_sstore(factory.const(0), _tainted(factory), pc=1, run_index=1)
    loaded = store.on_sload(factory.const(1), pc=2)
    assert loaded.opcode == "UNKNOWN"
    assert loaded.taints == frozenset()


def test_hash_key_store_creates_single_opaque_term(factory):
    store = StorageModel(factory)
    store.on_sstore(_sha3_key(factory, 0), factory.const(1), pc=1, run_index=1)
    assert len(store.entries[0].key.opaque) == 1


def test_indeterminate_matches_union_taints(factory):
    store = StorageModel(factory)
    a = _tainted(factory, "TIMESTAMP", 1)
    b = _tainted(factory, "NUMBER", 2)
    store.on_sstore(factory.make("SHA3", (factory.unknown(),)), a, pc=1, run_index=1)
    store.on_sstore(factory.make("SHA3", (factory.unknown(),)), b, pc=2, run_index=1)
    loaded = store.on_sload(factory.make("SHA3", (factory.unknown(),)), pc=3)
    assert loaded.taints == a.taints | b.taints
    assert loaded.concrete is None


def test_newer_indeterminate_store_taints_equal_match(factory):
    # a later write whose key cannot be told apart may alias ours
    store = StorageModel(factory)
    plain = factory.const(5)
    risky = _tainted(factory, "NUMBER", 9)
    store.on_sstore(factory.const(0), plain, pc=1, run_index=1)
    store.on_sstore(factory.make("SHA3", (factory.unknown(),)), risky, pc=2, run_index=1)
    loaded = store.on_sload(factory.const(0), pc=3)
    assert loaded.concrete == 5
    assert loaded.taints >= risky.taints


def test_equal_match_shields_older_indeterminate_stores(factory):
    store = StorageModel(factory)
    risky = _tainted(factory, "NUMBER", 9)
    store.on_sstore(factory.make("SHA3", (factory.unknown(),)), risky, pc=1, run_index=1)
    store.on_sstore(factory.const(0), factory.const(5), pc=2, run_index=1)
    loaded = store.on_sload(factory.const(0), pc=3)
    assert loaded.taints == frozenset()


# -- retention ----------------------------------------------------------------------


def test_retain_keeps_only_tainted_values(factory):
    store = StorageModel(factory)
    store.on_sstore(factory.const(0), _tainted(factory), pc=1, run_index=1)
    store.on_sstore(factory.const(1), factory.const(7), pc=2, run_index=1)
    retained = retain_tainted([store.tainted_entries()])
    assert len(retained) == 1
    assert retained[0].key.canonical() == (0, ())


def test_retain_dedupes_across_paths(factory):
    store1, store2 = StorageModel(factory), StorageModel(factory)
    for store in (store1, store2):
        store.on_sstore(factory.const(0), _tainted(factory, pc=5), pc=5, run_index=1)
    retained = retain_tainted([store1.tainted_entries(), store2.tainted_entries()])
    assert len(retained) == 1


def test_fingerprint_ignores_run_index(factory):
    s1, s2 = StorageModel(factory), StorageModel(factory)
    s1.on_sstore(factory.const(0), _tainted(factory, pc=5, run=1), pc=5, run_index=1)
    s2.on_sstore(factory.const(0), _tainted(factory, pc=5, run=2), pc=5, run_index=2)
    assert retained_fingerprint(s1.tainted_entries()) == retained_fingerprint(s2.tainted_entries())


def test_seeded_entries_visible_to_loads(factory):
    s1 = StorageModel(factory)
    s1.on_sstore(factory.const(3), _tainted(factory), pc=1, run_index=1)
    s2 = StorageModel(factory, seed=retain_tainted([s1.tainted_entries()]))
    loaded = s2.on_sload(factory.const(3), pc=2)
    assert loaded.taints


# -- concrete map oracle ----------------------------------------------------------


def _run_storage_program(ops, factory):
    store = StorageModel(factory)
    oracle_vals: dict[int, int] = {}
    oracle_taints: dict[int, frozenset] = {}
    comparisons = []
    for i, (kind, key, tainted) in enumerate(ops):
        if kind == "store":
            value = _tainted(factory, "TIMESTAMP", i) if tainted else factory.const(i)
            store.on_sstore(factory.const(key), value, pc=i, run_index=1)
            oracle_vals[key] = value.concrete if value.concrete is not None else -1
            oracle_taints[key] = value.taints
        else:
            loaded = store.on_sload(factory.const(key), pc=i)
            expect_val = oracle_vals.get(key)
            expect_taints = oracle_taints.get(key, frozenset())
            comparisons.append((loaded, expect_val, expect_taints))
    return comparisons


@pytest.mark.parametrize("seed", range(25))
def test_concrete_keys_match_map_oracle(seed, factory):
    rng = random.Random(seed)
    keys = list(range(6))
    ops = []
    for _ in range(rng.randint(5, 20)):
        if rng.random() < 0.6:
            ops.append(("store", rng.choice(keys), rng.random() < 0.5))
        else:
            ops.append(("load", rng.choice(keys), None))
    for loaded, expect_val, expect_taints in _run_storage_program(ops, factory):
        if expect_val is None:
            assert loaded.opcode == "UNKNOWN"
            assert loaded.taints == frozenset()
        else:
            assert loaded.taints == expect_taints
            if expect_val >= 0:
                assert loaded.concrete == expect_val
