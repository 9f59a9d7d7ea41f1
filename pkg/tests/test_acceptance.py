"""End-to-end acceptance checks, one test per criterion.

Each result is also summarised as a PASS/FAIL line at the end of the run
(see conftest.py).
"""

import time

import numpy as np
import pytest

from blockspec import costmodel
from blockspec.drafter import (
    ARConfig,
    ARDrafter,
    BlockDrafter,
    ConstantDrafter,
    DrafterConfig,
    OracleDrafter,
    TabularDrafter,
    backbone_forward,
    build_masked_block,
    correction_logits,
    block_rollout,
    gru_step,
    init_ar_drafter,
    init_block_drafter,
)
from blockspec.experiments import build_toy_setup, evaluate_tau, run_mode
from blockspec.lm import TinyTransformer, TransformerConfig, random_tabular, uniform_tabular
from blockspec.numerics import Tensor, grad_check
from blockspec.specdec import adversarial_drafter, ar_decode, decode_loop, enumerate_losslessness
from blockspec.trainer import block_logits, block_losses, combined_loss, make_batch, position_weights

ABLATION_MODES = ("tf+curr", "tf", "ttt", "backbone-only")
SEEDS = (0, 1, 2)
STEPS = 300


def detail(request, text):
    request.node.user_properties.append(("detail", text))


# ------------------------------------------------------------ criterion 1


@pytest.mark.criterion(1, "losslessness (exact enumeration)")
def test_losslessness(request):
    t0 = time.monotonic()
    worst, pairs = 0.0, 0
    for seed in range(20):
        for order in (1, 2):
            target = random_tabular(4, order, np.random.default_rng(seed))
            drafters = (
                random_tabular(4, order, np.random.default_rng(10_000 + seed)),
                uniform_tabular(4, order),
                adversarial_drafter(target),
                target,
            )
            for drafter in drafters:
                for gamma, horizon in ((3, 3), (2, 3), (1, 2)):
                    worst = max(worst, enumerate_losslessness(target, drafter, gamma, horizon))
                    pairs += 1
    elapsed = time.monotonic() - t0
    detail(request, f"{pairs} cases, max TV {worst:.2e} (<= 1e-10), {elapsed:.1f} s (<= 30 s)")
    assert worst <= 1e-10
    assert elapsed <= 30


# ------------------------------------------------------------ criterion 2


@pytest.mark.criterion(2, "greedy equivalence over 512 tokens")
def test_greedy_equivalence(request):
    t0 = time.monotonic()
    n_tokens = 512
    gamma = 7
    checked = 0
    for seed in range(10):
        cfg = TransformerConfig(vocab_size=32, mask_id=31, bos_id=30, d_model=16, n_layers=2, n_heads=2, max_ctx=n_tokens + 16)
        target = TinyTransformer.init(cfg, np.random.default_rng(seed))
        prompt = [30] + np.random.default_rng(100 + seed).integers(0, 30, size=3).tolist()
        expected = ar_decode(target, prompt, n_tokens)
        # a different drafter per target: untrained block drafter, n-gram table, constant token
        kind = seed % 3
        if kind == 0:
            dcfg = DrafterConfig(32, 31, 30, d_model=16, ctx_dim=16, n_layers=1, n_heads=2, block_size=gamma + 1, d_state=8, rank=4)
            params = init_block_drafter(dcfg, target.lm_head, np.random.default_rng(seed))
            params["head.w2"].data = np.random.default_rng(seed).normal(0, 0.5, params["head.w2"].shape)
            drafter = BlockDrafter(params, dcfg)
        elif kind == 1:
            drafter = TabularDrafter(random_tabular(32, 1, np.random.default_rng(seed), reserved=[30, 31]))
        else:
            drafter = ConstantDrafter(seed, 32)
        out, m = decode_loop(target, drafter, prompt, n_tokens, 0, gamma=gamma)
        assert out == expected, f"target seed {seed} ({drafter.method}) diverged"
        checked += 1
    elapsed = time.monotonic() - t0
    detail(request, f"{checked} targets x {n_tokens} tokens identical, {elapsed:.1f} s (<= 60 s)")
    assert elapsed <= 60


# ----------------------------------------------------- shared toy ablation


@pytest.fixture(scope="session")
def ablation():
    """Toy target plus every (mode, seed) drafter trained at the acceptance budget."""
    t0 = time.monotonic()
    setup = build_toy_setup(seed=0)
    outcomes = {(m, s): run_mode(setup, m, s, steps=STEPS) for m in ABLATION_MODES for s in SEEDS}
    return setup, outcomes, time.monotonic() - t0


def mean_tau(outcomes, mode):
    return float(np.mean([outcomes[(mode, s)].tau for s in SEEDS]))


# ------------------------------------------------------------ criterion 3


@pytest.mark.criterion(3, "tau bounds and oracle ceiling")
def test_tau_bounds(request, ablation):
    setup, outcomes, _ = ablation
    gamma = 7
    prompts = setup.prompts(8)[:4]
    taus = [o.tau for o in outcomes.values()]
    for temperature in (0, 1):
        oracle = evaluate_tau(setup.target, OracleDrafter(setup.target), prompts, 32, temperature, seed=0, gamma=gamma)
        assert oracle.tau_mean == gamma + 1
        floor = evaluate_tau(setup.target, ConstantDrafter(0, 64), prompts, 32, temperature, seed=0, gamma=gamma)
        taus.append(floor.tau_mean)
        for o in outcomes.values():
            taus.append(evaluate_tau(setup.target, o.result.drafter, prompts[:1], 32, temperature, seed=3).tau_mean)
    detail(request, f"{len(taus)} runs in [{min(taus):.2f}, {max(taus):.2f}] within [1, {gamma + 1}]; oracle = {gamma + 1} at T=0 and T=1")
    assert all(1.0 <= t <= gamma + 1 for t in taus)


# ------------------------------------------------------------ criterion 4


@pytest.mark.criterion(4, "zero-correction identity")
def test_zero_correction_identity(request):
    cfg = DrafterConfig()
    lm_head = Tensor(np.random.default_rng(0).normal(0, 0.3, (64, 64)))
    params = init_block_drafter(cfg, lm_head, np.random.default_rng(1))
    assert np.all(params["head.w2"].data == 0)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(int(rng.integers(1, 20)), 64))
        anchor = int(rng.integers(0, 62))
        greedy = seed % 2 == 0
        a = block_rollout(params, cfg, feats, anchor, greedy, np.random.default_rng(seed), use_head=True)
        b = block_rollout(params, cfg, feats, anchor, greedy, np.random.default_rng(seed), use_head=False)
        assert np.array_equal(a.q, b.q) and np.array_equal(a.tokens, b.tokens)
        assert np.array_equal(a.final_logits, a.base_logits)
    detail(request, "100 seeded inputs, q and tokens bitwise equal")


# ------------------------------------------------------------ criterion 5


@pytest.mark.criterion(5, "gradient fidelity")
def test_gradient_fidelity(request):
    cfg = DrafterConfig(16, 15, 14, d_model=8, ctx_dim=6, n_layers=2, n_heads=2, block_size=4, d_state=5, rank=3)
    lm_head = Tensor(np.random.default_rng(0).normal(0, 0.5, (8, 16)))
    params = init_block_drafter(cfg, lm_head, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    params["head.w2"].data = rng.normal(0, 0.3, params["head.w2"].shape)
    ctx = rng.normal(size=(2, 5, 6))
    mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
    blocks = np.array([build_masked_block(3, 4, cfg.vocab), build_masked_block(7, 4, cfg.vocab)])
    probe = rng.normal(size=(2, 4, 8))

    def backbone():
        return (backbone_forward(params, cfg, ctx, blocks, mask) * probe).sum()

    E = [Tensor(rng.normal(size=(2, 8))) for _ in range(3)]
    w_state = rng.normal(size=(2, 5))

    def gru_rollout():
        S = Tensor(np.zeros((2, 5)))
        for e in E:
            S = gru_step(params, S, e)
        return (S * w_state).sum()

    H = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    Sp = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    w_logit = rng.normal(size=(2, 16))

    def head():
        return (correction_logits(params, H, Sp) * w_logit).sum()

    seqs = rng.integers(0, 14, size=(3, 12))
    seqs[:, 0] = 14
    feats = rng.normal(size=(3, 12, 6))
    batch = make_batch(seqs, feats, [0, 1, 2], [2, 4, 8], 4)

    def curriculum():
        base, final = block_logits(params, cfg, batch, "tf")
        lb, lf = block_losses(base, final, batch.targets, position_weights(3))
        return combined_loss(lb, lf, 0.4)

    bb = [t for n, t in params.items() if n.startswith("backbone.") or n == "embed"]
    gru = [t for n, t in params.items() if n.startswith("head.gru.")]
    hd = [params["head.w1"], params["head.b1"], params["head.w2"], H, Sp]
    allp = [t for _, t in params.trainable()]
    errs = {
        "backbone": grad_check(backbone, bb, eps=1e-5, max_coords=24),
        "gru-3-step": grad_check(gru_rollout, gru, eps=1e-5, max_coords=None),
        "correction-head": grad_check(head, hd, eps=1e-5, max_coords=None),
        "curriculum-loss": grad_check(curriculum, allp, eps=1e-5, max_coords=16),
    }
    detail(request, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (<= 1e-4)")
    assert max(errs.values()) <= 1e-4


# ------------------------------------------------------------ criteria 6-8


@pytest.mark.criterion(6, "head ablation direction")
def test_head_ablation(request, ablation):
    _, outcomes, elapsed = ablation
    full, bare = mean_tau(outcomes, "tf+curr"), mean_tau(outcomes, "backbone-only")
    gain = full / bare - 1
    detail(request, f"tau block+head {full:.3f} vs backbone-only {bare:.3f} ({gain:+.1%}, need >= +5%); 12 runs in {elapsed:.0f} s (<= 600 s)")
    assert gain >= 0.05
    assert elapsed <= 600


@pytest.mark.criterion(7, "training-strategy ordering")
def test_strategy_ordering(request, ablation):
    _, outcomes, _ = ablation
    curr, tf, ttt = (mean_tau(outcomes, m) for m in ("tf+curr", "tf", "ttt"))
    per_seed = "; ".join(
        f"s{s}: " + "/".join(f"{outcomes[(m, s)].tau:.2f}" for m in ("tf+curr", "tf", "ttt")) for s in SEEDS
    )
    detail(request, f"mean tau tf+curr {curr:.3f} >= tf {tf:.3f} >= ttt {ttt:.3f} ({per_seed})")
    assert curr >= tf >= ttt


@pytest.mark.criterion(8, "curriculum anti-collapse")
def test_curriculum_anti_collapse(request, ablation):
    _, outcomes, _ = ablation
    pairs = [(outcomes[("tf+curr", s)].heldout_base, outcomes[("tf", s)].heldout_base) for s in SEEDS]
    detail(request, "held-out L_base tf+curr vs tf: " + ", ".join(f"{a:.3f} <= {b:.3f}" for a, b in pairs))
    assert all(a <= b for a, b in pairs)


# ------------------------------------------------------------ criterion 9


@pytest.mark.criterion(9, "cost-model consistency")
def test_costmodel_consistency(request):
    predicted = costmodel.speedup_ratio(1 + costmodel.REPORTED_TAU_GAIN, 1 + costmodel.REPORTED_LATENCY_GAIN)
    reported = 1 + costmodel.REPORTED_SPEEDUP_GAIN
    rel = abs(predicted / reported - 1)
    eagle = costmodel.implied_cycle_ratio(**costmodel.REPORTED["eagle3"])
    dflash = costmodel.implied_cycle_ratio(**costmodel.REPORTED["dflash"])
    ms = 1e-3
    base = dict(t_net_block=2.5 * ms, t_head_block=0.8 * ms, T_verify=9.0 * ms, L_target=7.0 * ms)
    slow = costmodel.LatencyProfile(**base, t_dhead=costmodel.HEAD_LATENCY_UNFUSED_MS * ms)
    fast = costmodel.LatencyProfile(**base, t_dhead=costmodel.HEAD_LATENCY_FUSED_MS * ms)
    delta = costmodel.par_draft_cost(slow) - costmodel.par_draft_cost(fast)
    delta_report = costmodel.method_report("block+head", 4.0, 7, slow).T_draft - costmodel.method_report("block+head", 4.0, 7, fast).T_draft
    detail(
        request,
        f"(a) {predicted:.4f} vs {reported:.3f} ({rel:.2%} <= 2%); "
        f"(b) {eagle:.4f} > {dflash:.4f}; (c) head delta {delta / ms:.4f} ms",
    )
    assert rel <= 0.02
    assert abs(eagle / 1.482 - 1) <= 0.01 and abs(dflash / 1.178 - 1) <= 0.01 and eagle > dflash
    assert abs(delta - 1.44 * ms) <= 1e-15 and abs(delta_report - delta) <= 1e-15


# ----------------------------------------------------------- criterion 10


@pytest.mark.criterion(10, "invocation accounting")
def test_invocation_accounting(request):
    cfg = TransformerConfig(vocab_size=16, mask_id=15, bos_id=14, d_model=8, n_layers=1, n_heads=2, max_ctx=128)
    target = TinyTransformer.init(cfg, np.random.default_rng(0))
    gamma = 5
    acfg = ARConfig(16, 15, 14, 8, 8, 12)
    ar = ARDrafter(init_ar_drafter(acfg, target.lm_head, np.random.default_rng(1)), acfg)
    dcfg = DrafterConfig(16, 15, 14, 8, 8, 1, 2, block_size=gamma + 1, d_state=6, rank=3)
    dparams = init_block_drafter(dcfg, target.lm_head, np.random.default_rng(2))
    block_head = BlockDrafter(dparams, dcfg, use_head=True)
    block = BlockDrafter(dparams, dcfg, use_head=False)
    lines = []
    for drafter, per_cycle, dhead in ((ar, gamma, 0), (block_head, 1, gamma), (block, 1, 0)):
        for temperature in (0, 1):
            before = drafter.counters.dhead_steps
            _, m = decode_loop(target, drafter, [14, 1, 2], 40, temperature, np.random.default_rng(0), gamma=gamma)
            assert m.head_calls == per_cycle * m.cycles
            assert m.net_calls == per_cycle * m.cycles
            assert drafter.counters.dhead_steps - before == dhead * m.cycles
        lines.append(f"{drafter.method} {m.head_calls // m.cycles} head/cycle")
    detail(request, ", ".join(lines) + f" (gamma {gamma})")


# ----------------------------------------------------------- criterion 11


@pytest.mark.runs_last
@pytest.mark.criterion(11, "full suite runtime")
def test_suite_runtime(request):
    elapsed = time.monotonic() - request.config.blockspec_start
    detail(request, f"{elapsed:.0f} s for the collected tests (<= 900 s)")
    assert elapsed <= 900
