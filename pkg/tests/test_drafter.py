import math

import numpy as np
import pytest

from blockspec.drafter import (
    ARConfig,
    ARDrafter,
    BlockDrafter,
    CausalState,
    Counters,
    DrafterConfig,
    TargetMismatchError,
    ar_rollout,
    ar_teacher_forced,
    backbone_forward,
    base_logits,
    build_masked_block,
    correction_flops,
    correction_logits,
    block_rollout,
    full_head_flops,
    gru_step,
    init_ar_drafter,
    init_block_drafter,
    load_bundle,
    pick_token,
    read_bundle_header,
    sample_index,
    save_bundle,
)
from blockspec.lm import ReservedTokenError, TinyTransformer, TransformerConfig, Vocabulary
from blockspec.numerics import Tensor, grad_check, no_grad, softmax_np

TCFG = TransformerConfig(vocab_size=16, mask_id=15, bos_id=14, d_model=8, n_layers=1, n_heads=2, max_ctx=64)
DCFG = DrafterConfig(16, 15, 14, d_model=8, ctx_dim=8, n_layers=1, n_heads=2, block_size=4, d_state=6, rank=3)


def make_target(seed=0):
    t = TinyTransformer.init(TCFG, np.random.default_rng(seed))
    t.freeze()
    return t


def make_drafter(target, seed=1, w2_scale=0.0, cfg=DCFG):
    params = init_block_drafter(cfg, target.lm_head, np.random.default_rng(seed))
    if w2_scale:
        params["head.w2"].data = np.random.default_rng(seed + 100).normal(0, w2_scale, params["head.w2"].shape)
    return params


def context(seed=0, T=5, dim=8):
    return np.random.default_rng(seed).normal(size=(T, dim))


# ------------------------------------------------------------------ blocks


def test_masked_block_examples():
    v = Vocabulary(16, 15, 14)
    assert build_masked_block(7, 4, v) == [7, 15, 15, 15]
    assert build_masked_block(3, 2, v) == [3, 15]
    assert build_masked_block(0, 16, Vocabulary()).count(63) == 15
    with pytest.raises(ReservedTokenError):
        build_masked_block(15, 4, v)
    with pytest.raises(ReservedTokenError):
        build_masked_block(14, 4, v)
    with pytest.raises(ValueError):
        build_masked_block(1, 1, v)


def test_backbone_shape_at_desk_dims():
    cfg = DrafterConfig()
    lm_head = Tensor(np.random.default_rng(0).normal(size=(64, 64)))
    params = init_block_drafter(cfg, lm_head, np.random.default_rng(1))
    H = backbone_forward(params, cfg, context(dim=64), [build_masked_block(5, 8, cfg.vocab)])
    assert H.shape == (1, 8, 64)


def test_backbone_reads_anchor_and_context():
    params = make_drafter(make_target())
    C = context()
    h1 = backbone_forward(params, DCFG, C, [[3, 15, 15, 15]]).data
    h2 = backbone_forward(params, DCFG, C, [[4, 15, 15, 15]]).data
    assert not np.allclose(h1, h2)
    for j in range(len(C)):
        C2 = C.copy()
        C2[j] += 0.5
        assert not np.allclose(backbone_forward(params, DCFG, C2, [[3, 15, 15, 15]]).data, h1)


def test_backbone_position_embeddings_separate_mask_rows():
    params = make_drafter(make_target())
    for name, t in params.items():
        if name != "lm_head" and not name.endswith("norm"):
            t.data = np.zeros_like(t.data)
    H = backbone_forward(params, DCFG, context(), [[3, 15, 15, 15]]).data[0]
    assert np.array_equal(H[1], H[2]) and np.array_equal(H[2], H[3])
    params["backbone.block_pos"].data = np.random.default_rng(0).normal(size=(4, 8))
    H = backbone_forward(params, DCFG, context(), [[3, 15, 15, 15]]).data[0]
    assert not np.allclose(H[1], H[2]) and not np.allclose(H[2], H[3])


def test_backbone_errors():
    params = make_drafter(make_target())
    with pytest.raises(ValueError):
        backbone_forward(params, DCFG, np.zeros((0, 8)), [[3, 15, 15, 15]])
    with pytest.raises(ValueError):
        backbone_forward(params, DCFG, context(dim=7), [[3, 15, 15, 15]])
    with pytest.raises(ValueError):
        backbone_forward(params, DCFG, context(), [[3, 15, 15]])


def test_padded_context_mask_ignores_padding():
    params = make_drafter(make_target())
    C = context(T=3)
    padded = np.concatenate([C, np.full((2, 8), 9.0)])[None]
    mask = np.array([[True, True, True, False, False]])
    a = backbone_forward(params, DCFG, C, [[3, 15, 15, 15]]).data
    b = backbone_forward(params, DCFG, padded, [[3, 15, 15, 15]], ctx_mask=mask).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_base_logits_use_the_shared_target_head():
    target = make_target()
    params = make_drafter(target)
    assert params["lm_head"] is target.lm_head and params.is_frozen("lm_head")
    H = Tensor(np.random.default_rng(0).normal(size=(4, 8)))
    assert np.array_equal(base_logits(H, params["lm_head"]).data, H.data @ target.lm_head.data)
    assert np.all(base_logits(Tensor(np.zeros((1, 8))), params["lm_head"]).data == 0.0)


# -------------------------------------------------------------------- head


def _zero_head(params):
    for n in params.names("head."):
        params[n].data = np.zeros_like(params[n].data)


def test_gru_zero_params():
    params = make_drafter(make_target())
    _zero_head(params)
    E = Tensor(np.ones((1, 8)))
    assert np.all(gru_step(params, Tensor(np.zeros((1, 6))), E).data == 0.0)
    s = np.arange(6.0).reshape(1, 6)
    assert np.allclose(gru_step(params, Tensor(s), E).data, 0.5 * s, atol=0)


def test_gru_matches_scalar_update():
    params = make_drafter(make_target(), seed=4)
    rng = np.random.default_rng(2)
    S, E = rng.normal(size=6), rng.normal(size=8)
    P = {n: params[n].data for n in params.names("head.gru.")}

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    out = []
    for k in range(6):
        z = sig(sum(E[i] * P["head.gru.w_z"][i, k] for i in range(8)) + sum(S[i] * P["head.gru.u_z"][i, k] for i in range(6)) + P["head.gru.b_z"][k])
        cand_pre = sum(E[i] * P["head.gru.w_h"][i, k] for i in range(8)) + P["head.gru.b_h"][k]
        for i in range(6):
            r_i = sig(
                sum(E[j] * P["head.gru.w_r"][j, i] for j in range(8))
                + sum(S[j] * P["head.gru.u_r"][j, i] for j in range(6))
                + P["head.gru.b_r"][i]
            )
            cand_pre += r_i * S[i] * P["head.gru.u_h"][i, k]
        out.append((1 - z) * S[k] + z * math.tanh(cand_pre))
    got = gru_step(params, Tensor(S[None]), Tensor(E[None])).data[0]
    assert np.max(np.abs(got - np.array(out))) <= 1e-12


def test_gru_three_step_rollout_gradient():
    params = make_drafter(make_target(), seed=3)
    E = [Tensor(x) for x in np.random.default_rng(5).normal(size=(3, 2, 8))]
    w = np.random.default_rng(6).normal(size=(2, 6))
    names = params.names("head.gru.")

    def f():
        S = Tensor(np.zeros((2, 6)))
        for e in E:
            S = gru_step(params, S, e)
        return (S * w).sum()

    assert grad_check(f, [params[n] for n in names], max_coords=20) <= 1e-4


def test_correction_zero_w2_and_flops():
    params = make_drafter(make_target())
    H, S = Tensor(np.ones((1, 8))), Tensor(np.ones((1, 6)))
    assert np.all(correction_logits(params, H, S).data == 0.0)
    assert correction_flops(64, 32, 16, 64) == 96 * 16 + 16 * 64 == 2560
    assert full_head_flops(64, 64) == 4096
    assert correction_flops(64, 32, 16, 64) < full_head_flops(64, 64)


def test_correction_matches_two_matmuls():
    params = make_drafter(make_target(), w2_scale=0.3)
    rng = np.random.default_rng(0)
    H, S = rng.normal(size=8), rng.normal(size=6)
    x = np.concatenate([H, S])
    u = x @ params["head.w1"].data + params["head.b1"].data
    expected = (u / (1 + np.exp(-u))) @ params["head.w2"].data
    got = correction_logits(params, Tensor(H[None]), Tensor(S[None])).data[0]
    assert np.max(np.abs(got - expected)) <= 1e-6


def test_head_is_smaller_than_backbone_at_desk_dims():
    cfg = DrafterConfig()
    drafter = BlockDrafter(init_block_drafter(cfg, Tensor(np.zeros((64, 64))), np.random.default_rng(0)), cfg)
    assert 0 < drafter.head_params() < drafter.backbone_params()


def test_causal_state_initial():
    s = CausalState.initial(6)
    assert s.position == 0 and np.all(s.vector == 0)


# ----------------------------------------------------------------- rollout


def test_zero_correction_rollout_equals_backbone_only():
    target = make_target()
    params = make_drafter(target)
    for seed in range(10):
        C, anchor = context(seed), seed % 14
        with_head = block_rollout(params, DCFG, C, anchor, False, np.random.default_rng(seed), use_head=True)
        without = block_rollout(params, DCFG, C, anchor, False, np.random.default_rng(seed), use_head=False)
        assert np.array_equal(with_head.tokens, without.tokens)
        assert np.array_equal(with_head.q, without.q)


def test_rollout_block_invariants_and_counters():
    target = make_target()
    params = make_drafter(target, w2_scale=0.5)
    counters = Counters()
    blk = block_rollout(params, DCFG, context(), 3, False, np.random.default_rng(0), counters=counters)
    assert blk.block_input == [3, 15, 15, 15]
    assert blk.gamma == 3
    assert np.array_equal(blk.final_logits, blk.base_logits + blk.correction)
    assert np.allclose(blk.q.sum(axis=1), 1.0, atol=1e-9)
    assert counters.net_calls == 1 and counters.head_calls == 1 and counters.dhead_steps == 3
    assert [s.position for s in blk.states] == [0, 1, 2]
    assert np.all(blk.states[0].vector == 0)


def test_greedy_rollout_is_deterministic_and_never_reserved():
    target = make_target()
    params = make_drafter(target, w2_scale=0.5)
    # push the reserved ids to the top of the base distribution
    params["lm_head"].data[:, 14:] += 50.0
    a = block_rollout(params, DCFG, context(), 3, True, None)
    b = block_rollout(params, DCFG, context(), 3, True, None)
    assert np.array_equal(a.tokens, b.tokens)
    assert not set(a.tokens.tolist()) & {14, 15}
    assert np.all(a.q[:, 14:] == 0)
    params["lm_head"].data[:, 14:] -= 50.0


def test_head_correction_is_causal_inside_the_block():
    target = make_target()
    params = make_drafter(target, w2_scale=0.5)
    H = backbone_forward(params, DCFG, context(), [[3, 15, 15, 15]]).data[0, 1:]

    def corrections(tokens):
        S = Tensor(np.zeros((1, 6)))
        out = []
        with no_grad():
            for i, tok in enumerate(tokens):
                out.append(correction_logits(params, Tensor(H[i][None]), S).data[0])
                S = gru_step(params, S, params["embed"][np.array([tok])])
        return np.array(out)

    base = corrections([1, 2, 3])
    for j in range(3):
        forced = [1, 2, 3]
        forced[j] = 9
        other = corrections(forced)
        assert np.array_equal(other[: j + 1], base[: j + 1])
        if j < 2:
            assert not np.allclose(other[j + 1 :], base[j + 1 :])


def test_block_drafter_propose_contract():
    target = make_target()
    drafter = BlockDrafter(make_drafter(target), DCFG, use_head=False)
    assert drafter.method == "block"
    with pytest.raises(ValueError):
        drafter.propose([14, 1], context(), 5, True, None)
    with pytest.raises(ValueError):
        drafter.propose([14, 1], np.zeros((0, 8)), 3, True, None)
    blk = drafter.propose([14, 1, 2], context(T=2), 3, True, None)
    assert blk.anchor == 2 and blk.gamma == 3


# --------------------------------------------------------------------- AR


def test_ar_rollout_counts_one_pair_per_step():
    target = make_target()
    cfg = ARConfig(16, 15, 14, 8, 8, 12)
    params = init_ar_drafter(cfg, target.lm_head, np.random.default_rng(0))
    for gamma in (1, 16):
        c = Counters()
        blk = ar_rollout(params, cfg, context(), 3, gamma, True, None, c)
        assert c.net_calls == gamma and c.head_calls == gamma
        assert blk.gamma == gamma
    assert ARDrafter(params, cfg).method == "ar"


def test_ar_step_depends_on_previous_token():
    target = make_target()
    cfg = ARConfig(16, 15, 14, 8, 8, 12)
    params = init_ar_drafter(cfg, target.lm_head, np.random.default_rng(0))
    last = Tensor(context()[-1:])
    a = ar_teacher_forced(params, last, [3], np.array([[1, 2, 5]])).data[0]
    b = ar_teacher_forced(params, last, [3], np.array([[1, 7, 5]])).data[0]
    assert np.array_equal(a[:2], b[:2])
    assert not np.allclose(a[2], b[2])


# ----------------------------------------------------------------- helpers


def test_pick_token_ties_go_to_lowest_id():
    assert pick_token(np.array([1.0, 3.0, 3.0]), True, None) == 1
    assert pick_token(np.array([1.0, 3.0, 3.0]), True, None, forbid={1}) == 2
    with pytest.raises(ValueError):
        pick_token(np.zeros(3), False, None)


def test_sample_index_follows_probabilities():
    rng = np.random.default_rng(0)
    p = np.array([0.0, 0.2, 0.0, 0.8])
    draws = np.bincount([sample_index(p, rng) for _ in range(4000)], minlength=4)
    assert draws[0] == 0 and draws[2] == 0
    assert abs(draws[3] / 4000 - 0.8) < 0.03


# ----------------------------------------------------------------- bundles


def test_bundle_round_trip_and_target_check(tmp_path):
    target = make_target()
    drafter = BlockDrafter(make_drafter(target, w2_scale=0.2), DCFG)
    digest = save_bundle(tmp_path / "d.bundle", drafter, target.digest(), {"mode": "tf+curr"})
    assert len(digest) == 64
    header = read_bundle_header(tmp_path / "d.bundle")
    assert header["kind"] == "block" and header["target_hash"] == target.digest()
    back = load_bundle(tmp_path / "d.bundle", target)
    assert back.cfg == DCFG and back.use_head
    assert back.params["lm_head"] is target.lm_head
    C = context()
    a = block_rollout(drafter.params, DCFG, C, 3, True, None)
    b = block_rollout(back.params, DCFG, C, 3, True, None)
    assert np.max(np.abs(a.final_logits - b.final_logits)) <= 1e-4
    with pytest.raises(TargetMismatchError):
        load_bundle(tmp_path / "d.bundle", make_target(seed=9))


def test_ar_bundle_round_trip(tmp_path):
    target = make_target()
    cfg = ARConfig(16, 15, 14, 8, 8, 12)
    drafter = ARDrafter(init_ar_drafter(cfg, target.lm_head, np.random.default_rng(0)), cfg)
    save_bundle(tmp_path / "a.bundle", drafter, target.digest())
    back = load_bundle(tmp_path / "a.bundle", target)
    assert isinstance(back, ARDrafter) and back.cfg == cfg


def test_q_is_softmax_of_final_logits_off_reserved():
    target = make_target()
    params = make_drafter(target, w2_scale=0.5)
    blk = block_rollout(params, DCFG, context(), 3, False, np.random.default_rng(1))
    expected = softmax_np(np.where(np.isin(np.arange(16), [14, 15]), -np.inf, blk.final_logits))
    assert np.allclose(blk.q, expected, atol=1e-15)
