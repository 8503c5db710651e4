import math

import numpy as np
import pytest

from hbtree import analysis
from hbtree.gf2 import BitVector, DimensionError, hamming_distance, mat_vec_mul
from hbtree.hb import ProtocolParams
from hbtree.sim import SimConfig, run_config
from hbtree.stream import SeededStream
from hbtree.tree import (
    CapacityError,
    MasterSecret,
    TraversalMessage,
    TreeDirectory,
    derive_node_key,
    encode_path,
    leaf_to_path,
    path_to_leaf,
    random_credential,
    reader_descend,
    register_tag,
    run_protocol_iterated,
    run_protocol_once,
    setup_system,
    single_run_ops,
    tag_traversal_respond,
)


def params(**kw):
    base = dict(eps=0.25, k_x=32, k_y=48, r=64, r_tr=40, tau=20, d=2, beta=4, s=1)
    return ProtocolParams(**(base | kw))


def directory(p=None, seed=1):
    p = p or params()
    return setup_system(p.capacity, p, SeededStream(seed))


# ---------------------------------------------------------------- setup


def test_setup_capacity_examples():
    s = SeededStream(0)
    big = ProtocolParams(eps=0.25, k_x=80, k_y=330, r=212, r_tr=102, tau=63, d=2, beta=1000)
    assert setup_system(10**6, big, s).capacity == 10**6
    assert setup_system(10**6, big.replace(beta=100, d=3, r_tr=83), s).capacity == 10**6
    with pytest.raises(CapacityError):
        setup_system(10, params(beta=2, d=3), s)


def test_master_secret_is_seeded():
    assert MasterSecret.generate(SeededStream(5)) == MasterSecret.generate(SeededStream(5))
    assert MasterSecret.generate(SeededStream(5)) != MasterSecret.generate(SeededStream(6))
    with pytest.raises(ValueError):
        MasterSecret(b"short")


def test_master_secret_repr_hides_value():
    ms = MasterSecret.generate(SeededStream(5))
    assert ms.ms.hex() not in repr(ms)


# ---------------------------------------------------------------- key derivation


def test_path_encoding():
    assert encode_path((3, 0, 7)) == b"1:3/2:0/3:7"


def test_leaf_path_roundtrip():
    for leaf in range(64):
        path = leaf_to_path(leaf, 4, 3)
        assert len(path) == 3
        assert path_to_leaf(path, 4) == leaf
    assert leaf_to_path(6, 2, 3) == (1, 1, 0)


def test_node_key_deterministic_and_sized():
    ms = MasterSecret.generate(SeededStream(1))
    k = derive_node_key(ms, (2, 5), 330)
    assert len(k) == 330
    assert k == derive_node_key(ms, (2, 5), 330)
    assert k != derive_node_key(MasterSecret.generate(SeededStream(2)), (2, 5), 330)


def test_sibling_keys_look_independent():
    ms = MasterSecret.generate(SeededStream(3))
    k_y = 256
    sigma = math.sqrt(k_y / 4)
    for c in range(100):
        dist = hamming_distance(derive_node_key(ms, (c,), k_y), derive_node_key(ms, (c + 1,), k_y))
        assert abs(dist - k_y / 2) <= 4 * sigma


def test_root_path_has_no_key():
    with pytest.raises(ValueError):
        derive_node_key(MasterSecret.generate(SeededStream(1)), (), 16)


def test_directory_rejects_bad_paths():
    d = directory()
    with pytest.raises(ValueError):
        d.node_key((4,))
    with pytest.raises(ValueError):
        d.node_key((0, 0, 0))


# ---------------------------------------------------------------- registration


def test_register_fills_every_leaf_once():
    p = params(beta=3, d=3)
    d = directory(p)
    s = SeededStream(9)
    leaves = [register_tag(d, f"t{i}", s).true_leaf for i in range(27)]
    assert sorted(leaves) == list(range(27))
    with pytest.raises(CapacityError):
        register_tag(d, "one-too-many", s)


def test_register_duplicate_id():
    d = directory()
    s = SeededStream(9)
    register_tag(d, "a", s)
    with pytest.raises(ValueError):
        register_tag(d, "a", s)


def test_assignment_is_uniform_for_first_tag():
    counts = np.zeros(16, dtype=int)
    for i in range(3200):
        d = TreeDirectory(params(), MasterSecret(bytes(32)))
        counts[d.assign_leaf("x", SeededStream(i))] += 1
    # chi-square with 15 dof; 99.9% quantile is 37.7
    chi2 = ((counts - 200) ** 2 / 200).sum()
    assert chi2 < 37.7


def test_credential_rederivable_from_directory():
    d = directory(params(beta=5, d=3))
    cred = register_tag(d, "tag", SeededStream(4))
    path = leaf_to_path(cred.true_leaf, 5, 3)
    for level, key in enumerate(cred.path_keys):
        assert key == d.node_key(path[: level + 1])
    keys = d.auth_keys(cred.true_leaf)
    assert (cred.x_t, cred.y_t) == (keys.x, keys.y)


def test_directory_json_roundtrip_keeps_free_list():
    d = directory(params(beta=3, d=2))
    s = SeededStream(10)
    for i in range(4):
        register_tag(d, f"t{i}", s)
    clone = TreeDirectory.from_json(d.to_json())
    assert clone.assignment == d.assignment
    a = [register_tag(d, f"u{i}", SeededStream(i)).true_leaf for i in range(5)]
    b = [register_tag(clone, f"u{i}", SeededStream(i)).true_leaf for i in range(5)]
    assert a == b


def test_storage_matches_key_budget():
    p = params(k_x=80, k_y=330, d=3, beta=4)
    cred = register_tag(directory(p), "t", SeededStream(1))
    assert cred.storage_bits() == p.k_y * (p.d + 1) + p.k_x
    doc = cred.to_json()
    serialized = sum(k["len"] for k in doc["path_keys"]) + doc["x_t"]["len"] + doc["y_t"]["len"]
    assert serialized == 1400


# ---------------------------------------------------------------- traversal


def test_noise_free_traversal_is_exact():
    p = params(eps=0.0)
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(2))
    msg = tag_traversal_respond(cred, p, SeededStream(3))
    assert msg.b_m.shape == (p.r, p.k_y)
    b_tr = msg.b_m.top_rows(p.r_tr)
    for z, y in zip(msg.z_levels, cred.path_keys):
        assert z == mat_vec_mul(b_tr, y)


def test_depth_one_sends_one_response():
    p = params(d=1, beta=16)
    cred = register_tag(directory(p), "t", SeededStream(2))
    assert len(tag_traversal_respond(cred, p, SeededStream(3)).z_levels) == 1


def test_traversal_noise_weight():
    p = params(d=4, beta=2, r_tr=64, r=64)
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(2))
    total = levels = 0
    for i in range(2500):
        msg = tag_traversal_respond(cred, p, SeededStream(i))
        b_tr = msg.b_m.top_rows(p.r_tr)
        for z, y in zip(msg.z_levels, cred.path_keys):
            total += (z ^ mat_vec_mul(b_tr, y)).weight()
            levels += 1
    assert levels == 10_000
    mean, sigma = 0.25 * 64, math.sqrt(64 * 0.25 * 0.75 / levels)
    assert abs(total / levels - mean) <= 3 * sigma


def test_noise_free_descent_finds_every_leaf():
    p = params(eps=0.0, beta=5, d=3, r_tr=32)
    d = directory(p)
    s = SeededStream(6)
    for i in range(p.capacity):
        cred = register_tag(d, i, s)
        assert reader_descend(d, tag_traversal_respond(cred, p, SeededStream(i))) == cred.true_leaf


def test_descend_rejects_wrong_shapes():
    p = params()
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    msg = tag_traversal_respond(cred, p, SeededStream(2))
    with pytest.raises(DimensionError):
        reader_descend(d, TraversalMessage(msg.b_m, msg.z_levels[:1]))
    with pytest.raises(DimensionError):
        reader_descend(d, TraversalMessage(msg.b_m.top_rows(10), msg.z_levels))
    with pytest.raises(DimensionError):
        tag_traversal_respond(cred, p.replace(d=3, beta=4), SeededStream(2))


def test_tie_goes_to_lowest_child():
    # all children share one key when B is all zero, so every distance ties
    p = params(eps=0.0)
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    msg = tag_traversal_respond(cred, p, SeededStream(2))
    from hbtree.gf2 import BitMatrix

    zero = TraversalMessage(BitMatrix.zeros(p.r, p.k_y), tuple(BitVector.zeros(p.r_tr) for _ in range(p.d)))
    assert reader_descend(d, zero) == 0
    assert reader_descend(d, msg) == cred.true_leaf


# ---------------------------------------------------------------- full protocol


def test_noise_free_run_accepts():
    p = params(eps=0.0, tau=0)
    d = directory(p)
    s = SeededStream(7)
    for i in range(p.capacity):
        cred = register_tag(d, i, s)
        out = run_protocol_once(d, cred, p, SeededStream(100 + i))
        assert (out.accepted, out.identified_leaf, out.distance) == (True, cred.true_leaf, 0)
        assert out.repeats_used == 1


def test_op_counts_within_stated_ranges():
    p = params()
    ops = single_run_ops(p)
    assert p.d * p.beta + 1 <= ops.reader_matvec <= p.d * p.beta + 2
    assert p.d + 1 <= ops.tag_matvec <= p.d + 2


def test_communication_for_two_level_tree():
    p = ProtocolParams(eps=0.25, k_x=80, k_y=256, r=80, r_tr=80, tau=20, d=2, beta=1000)
    ops = single_run_ops(p)
    assert ops.total_bits == 27_120
    assert ops.total_bits == p.r * (p.k_x + p.k_y + p.d + 1)


def test_run_reports_its_op_counts():
    p = params()
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    out = run_protocol_once(d, cred, p, SeededStream(2))
    assert out.op_counts == single_run_ops(p)


def test_run_is_reproducible():
    p = params()
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    a = run_protocol_once(d, cred, p, SeededStream(2), record=True)
    b = run_protocol_once(d, cred, p, SeededStream(2), record=True)
    assert a.transcripts[0].to_json() == b.transcripts[0].to_json()


def test_transcript_fields():
    p = params()
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    out = run_protocol_once(d, cred, p, SeededStream(2), record=True)
    doc = out.transcripts[0].to_json()
    assert set(doc) == {"B", "z_levels", "path", "level_distances", "A", "z",
                        "identified_leaf", "distance", "verdict"}
    assert doc["B"]["rows"] == p.r and doc["A"]["cols"] == p.k_x
    assert len(doc["z_levels"]) == p.d
    assert doc["verdict"] in ("accept", "reject")


def test_iterated_with_one_repeat_equals_single_run():
    p = params(s=1)
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    for i in range(20):
        once = run_protocol_once(d, cred, p, SeededStream(i))
        it = run_protocol_iterated(d, cred, p, SeededStream(i))
        assert (once.accepted, once.identified_leaf, once.distance, once.op_counts) == \
            (it.accepted, it.identified_leaf, it.distance, it.op_counts)


def test_iterated_stops_at_first_accept_and_accumulates():
    p = params(s=4, tau=12, r=40)
    d = directory(p)
    cred = register_tag(d, "t", SeededStream(1))
    seen = set()
    for i in range(200):
        out = run_protocol_iterated(d, cred, p, SeededStream(i), record=True)
        assert 1 <= out.repeats_used <= 4
        assert len(out.transcripts) == out.repeats_used
        assert out.op_counts.reader_matvec == out.repeats_used * single_run_ops(p).reader_matvec
        assert [t.accepted for t in out.transcripts[:-1]] == [False] * (out.repeats_used - 1)
        if out.repeats_used < 4:
            assert out.accepted
        seen.add(out.repeats_used)
    assert len(seen) > 1


def test_impostor_accept_rate_matches_auth_far():
    p = ProtocolParams(eps=0.25, k_x=32, k_y=48, r=32, r_tr=32, tau=10, d=2, beta=4)
    cfg = SimConfig(params=p, n_tags=16, trials=20_000, impostor_fraction=1.0, root_seed="a1")
    far = run_config(cfg)["far"]
    assert far.covers(analysis.far_auth(32, 10))


def test_impostor_rate_does_not_depend_on_traversal():
    p = ProtocolParams(eps=0.25, k_x=32, k_y=48, r=32, r_tr=32, tau=10, d=2, beta=4)
    base = SimConfig(params=p, n_tags=16, trials=20_000, impostor_fraction=1.0, root_seed="a2")
    free = run_config(base)["far"]
    forced = run_config(base.replace(traversal="forced", root_seed="a3"))["far"]
    # two-proportion z-test at 4 sigma
    pooled = (free.estimate + forced.estimate) / 2
    sigma = math.sqrt(2 * pooled * (1 - pooled) / 20_000)
    assert abs(free.estimate - forced.estimate) <= 4 * sigma


def test_random_credential_is_unrelated():
    p = params()
    cred = random_credential(p, SeededStream(5))
    assert len(cred.path_keys) == p.d and cred.true_leaf is None
    assert len(cred.x_t) == p.k_x and len(cred.y_t) == p.k_y


def test_combined_reject_rate_close_to_union_bound():
    p = ProtocolParams(eps=0.25, k_x=32, k_y=64, r=64, r_tr=24, tau=20, d=3, beta=4)
    stats = run_config(SimConfig(params=p, n_tags=64, trials=20_000, root_seed="c0"))
    gamma = analysis.combined_frr(p.d, analysis.false_branch(24, 0.25, 4), analysis.frr_auth(64, 20, 0.25))
    reader = stats["expected_frr_reader"].estimate
    assert stats["frr"].covers(reader)
    # the union-bound form overestimates slightly at this size
    assert abs(stats["frr"].estimate - gamma) / gamma < 0.15
