"""End-to-end acceptance gate.

Each test covers one release criterion, prints a single machine-greppable
PASS/FAIL line, and enforces the pinned tolerance and runtime budget.
"""

import time

import numpy as np
import pytest

from aspectedit.attention import BinaryMask
from aspectedit.engine import (
    PARALLEL,
    EngineConfig,
    run_edit,
    sequential_repeat_baseline,
)
from aspectedit.grouping import (
    GLOBAL,
    NON_RIGID,
    RIGID,
    BranchSpec,
    ClassifiedAction,
    Group,
    classify_edit,
    group_edits,
    plan_branches,
)
from aspectedit.metrics import ToyEmbedder, aspacc_clip, dclip_score, pixel_metrics
from aspectedit.plan import SWAP, apply_actions, infer_actions, infer_plan, tokenize
from aspectedit.predictors import (
    Conditioning,
    GaussianMixtureWorld,
    GmmPredictor,
    consistency_noise,
)
from aspectedit.sampler import SamplerConfig, denoise_step, renoise_step, sample_source
from aspectedit.schedules import build_schedule
from aspectedit.worlds import (
    multi_aspect_scenario,
    sample_source_latent,
    two_aspect_scenario,
)

SCHED = build_schedule("linear", T=1000)


def report(number, name, ok, detail):
    print(f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {number} ({name}): {detail}"


def test_criterion_1_consistency_denoise_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        dim = int(rng.integers(1, 8))
        z0 = rng.standard_normal((1, 1, dim))
        noise = rng.standard_normal((1, 1, dim))
        tau = int(rng.integers(1, 1001))
        z_tau = renoise_step(z0, tau, noise, SCHED)
        eps = consistency_noise(z_tau, z0, tau, SCHED)
        back = denoise_step(z_tau, eps, tau, SCHED)
        worst = max(worst, float(np.max(np.abs(back - z0))))
    elapsed = time.perf_counter() - start
    report(
        1,
        "consistency-denoise-identity",
        worst <= 1e-6 and elapsed < 1.0,
        f"max_err={worst:.3e} tol=1e-6 runtime={elapsed:.3f}s budget=1s",
    )


def test_criterion_2_source_reconstruction():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(50):
        k = int(rng.integers(2, 5))
        dim = int(rng.integers(2, 5))
        weights = rng.dirichlet(np.ones(k))
        world = GaussianMixtureWorld(
            means=rng.uniform(-3, 3, size=(k, dim)),
            stddevs=rng.uniform(0.05, 0.5, size=k),
            weights=weights / weights.sum(),
            label_map={},
        )
        pred = GmmPredictor(world, SCHED)
        z_src = rng.standard_normal((1, 1, dim))
        cfg = SamplerConfig(schedule=SCHED, steps=15, guidance=4.0, seed=i)
        traj = sample_source(z_src, pred, Conditioning.from_prompt("the scene"), cfg)
        worst = max(worst, float(np.max(np.abs(traj[-1].z - z_src))))
    elapsed = time.perf_counter() - start
    report(
        2,
        "source-reconstruction",
        worst <= 1e-5 and elapsed < 5.0,
        f"max_err={worst:.3e} tol=1e-5 runtime={elapsed:.3f}s budget=5s",
    )


def test_criterion_3_no_edit_invariance():
    start = time.perf_counter()
    sc = two_aspect_scenario()
    pred = GmmPredictor(sc.world, SCHED)
    z_src = sample_source_latent(sc, seed=0)
    src_prompt = sc.plan.source_prompt
    cfg = EngineConfig(
        sampler=SamplerConfig(schedule=SCHED, steps=15, guidance=4.0, seed=0)
    )

    # identical conditioning on adjacent branches, full-coverage mask: the
    # calibrated update must copy the predecessor's lagged latent each step
    full_branch = BranchSpec(
        index=1,
        group=Group(
            edit_type=GLOBAL, members=(), union_mask=BinaryMask(grid=np.ones((1, 2)))
        ),
        auxiliary=False,
        conditioning=Conditioning.from_prompt(src_prompt),
    )
    plan_same = infer_plan(src_prompt, src_prompt)
    result = run_edit(z_src, plan_same, [full_branch], pred, cfg)
    by_branch_step = {(r.branch, r.step): r for r in result.trace}
    per_step = 0.0
    for k in range(cfg.sampler.steps):
        lagged = z_src if k == 0 else by_branch_step[(0, k - 1)].z_edt
        per_step = max(
            per_step, float(np.max(np.abs(by_branch_step[(1, k)].z_edt - lagged)))
        )

    # all-no-op plan: the full run must return the source latent
    noop_branches = plan_branches(plan_same, {}, grid_shape=(1, 2))
    final = run_edit(z_src, plan_same, noop_branches, pred, cfg).final
    final_err = float(np.max(np.abs(final - z_src)))
    elapsed = time.perf_counter() - start
    report(
        3,
        "no-edit-invariance",
        per_step <= 1e-6 and final_err <= 1e-4 and elapsed < 5.0,
        f"per_step={per_step:.3e} tol=1e-6 final={final_err:.3e} tol=1e-4 "
        f"runtime={elapsed:.3f}s budget=5s",
    )


def test_criterion_4_editing_efficacy():
    start = time.perf_counter()
    sc = two_aspect_scenario()  # component means +-2, stddev 0.1
    pred = GmmPredictor(sc.world, SCHED)
    branches = plan_branches(sc.plan, sc.masks, beta=1.0, grid_shape=(1, 2))
    bound = 3.0 * sc.stddev
    hits = 0
    oracle_hits = 0
    for seed in range(100):
        z_src = sample_source_latent(sc, seed)
        cfg = EngineConfig(
            sampler=SamplerConfig(schedule=SCHED, steps=15, guidance=4.0, seed=seed)
        )
        final = run_edit(z_src, sc.plan, branches, pred, cfg).final.reshape(-1)
        if np.max(np.abs(final - sc.target_mean)) <= bound:
            hits += 1
        # oracle: a direct draw from the target-conditioned component
        # satisfies the same bound at a comparable rate
        direct = sc.target_mean + sc.stddev * np.random.default_rng(
            seed + 10_000
        ).standard_normal(2)
        if np.max(np.abs(direct - sc.target_mean)) <= bound:
            oracle_hits += 1
    elapsed = time.perf_counter() - start
    report(
        4,
        "editing-efficacy",
        hits >= 95 and oracle_hits >= 95 and elapsed < 30.0,
        f"hits={hits}/100 oracle_hits={oracle_hits}/100 threshold=95 "
        f"bound={bound} runtime={elapsed:.3f}s budget=30s",
    )


def test_criterion_5_grouping_fixtures():
    start = time.perf_counter()

    def mask(cells, shape=(8, 8)):
        grid = np.zeros(shape)
        for r, c in cells:
            grid[r, c] = 1.0
        return BinaryMask(grid=grid)

    swap = next(
        a for a in infer_actions("a boat", "a car") if a.action == SWAP
    )

    def ca(edit_type, m):
        return ClassifiedAction(
            action=swap, edit_type=edit_type, source_mask=m, target_mask=m
        )

    ok = True
    details = []

    # two disjoint-mask local edits fall into separate groups
    disjoint = group_edits(
        [
            ca(RIGID, mask([(0, c) for c in range(4)])),
            ca(RIGID, mask([(6, c) for c in range(4)])),
        ]
    )
    ok &= disjoint.N == 2
    details.append(f"disjoint_groups={disjoint.N} want=2")

    # two overlapping rigid edits merge into one group
    overlapping = group_edits(
        [
            ca(RIGID, mask([(0, c) for c in range(8)] + [(1, 0), (1, 1)])),
            ca(RIGID, mask([(0, c) for c in range(8)] + [(1, 0)])),
        ]
    )
    ok &= overlapping.N == 1
    details.append(f"overlap_groups={overlapping.N} want=1")

    # typing boundaries: miou 9/10 = 0.9 is rigid, 8/10 is non-rigid
    src10 = mask([(2, c) for c in range(8)] + [(3, 0), (3, 1)])
    tgt9 = mask([(2, c) for c in range(8)] + [(3, 0)])
    tgt8 = mask([(2, c) for c in range(8)])
    big = mask([(r, c) for r in range(4, 8) for c in range(8)])
    t_rigid = classify_edit(swap, src10, tgt9, [tgt9, big], lam=0.9, beta=0.8)
    t_nonrigid = classify_edit(swap, src10, tgt8, [tgt8, big], lam=0.9, beta=0.8)
    ok &= t_rigid == RIGID and t_nonrigid == NON_RIGID
    details.append(f"lam_boundary=({t_rigid},{t_nonrigid})")

    # coverage boundary: matte 8 over union 10 meets beta=0.8, 7 does not
    tgt_global = mask([(0, c) for c in range(8)])
    tgt_local = mask([(0, c) for c in range(7)])
    union_other = mask([(0, c) for c in range(8)] + [(1, 0), (1, 1)])
    t_global = classify_edit(
        swap, tgt_global, tgt_global, [tgt_global, union_other], lam=0.9, beta=0.8
    )
    t_local = classify_edit(
        swap, tgt_local, tgt_local, [tgt_local, union_other], lam=0.9, beta=0.8
    )
    ok &= t_global == GLOBAL and t_local != GLOBAL
    details.append(f"beta_boundary=({t_global},{t_local})")

    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    report(
        5,
        "grouping-fixtures",
        bool(ok),
        "; ".join(details) + f"; runtime={elapsed:.3f}s budget=1s",
    )


def test_criterion_6_parser_completeness():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    vocab = [f"w{i}" for i in range(40)]
    hits = 0
    total = 500
    for _ in range(total):
        n = int(rng.integers(3, 12))
        src = list(rng.choice(vocab, size=n, replace=False))
        tgt = list(src)
        for _ in range(int(rng.integers(1, 4))):
            op = rng.choice(["swap", "add", "delete"])
            if op == "swap":
                tgt[int(rng.integers(0, len(tgt)))] = f"x{int(rng.integers(100))}"
            elif op == "add":
                tgt.insert(int(rng.integers(0, len(tgt) + 1)), f"y{int(rng.integers(100))}")
            elif len(tgt) > 1:
                del tgt[int(rng.integers(0, len(tgt)))]
        s, t = " ".join(src), " ".join(tgt)
        if apply_actions(tokenize(s), infer_actions(s, t)) == tokenize(t):
            hits += 1
    elapsed = time.perf_counter() - start
    report(
        6,
        "parser-completeness",
        hits == total and elapsed < 2.0,
        f"reconstructed={hits}/{total} runtime={elapsed:.3f}s budget=2s",
    )


def test_criterion_7_metrics_sanity():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    img = rng.random((3, 8, 8))
    other = rng.random((3, 8, 8))

    ssim_self = pixel_metrics(img, img).ssim
    mse_ab = pixel_metrics(img, other).mse
    mse_ba = pixel_metrics(other, img).mse
    dclip = dclip_score(ToyEmbedder(), img, other, "a red cat", "a blue cat").score

    # engineered per-aspect accuracy fixtures
    class TableEmbedder:
        def __init__(self, texts):
            self.texts = texts

        def text_embed(self, text):
            return np.asarray(self.texts[text], float)

        def image_embed(self, image):
            return np.array([1.0, 0.0])

    plan = infer_plan("a red cat on grass", "a blue cat on sand")

    def fixture(win_first, win_second):
        return TableEmbedder(
            {
                "a blue cat on sand": [0.5, 0.0],
                "a red cat on sand": [0.2 if win_first else 0.8, 0.0],
                "a blue cat on grass": [0.2 if win_second else 0.8, 0.0],
            }
        )

    scores = tuple(
        aspacc_clip(fixture(*wins), np.zeros((1, 1, 1)), plan)[0]
        for wins in ((True, True), (False, False), (True, False))
    )

    elapsed = time.perf_counter() - start
    ok = (
        abs(ssim_self - 1.0) <= 1e-12
        and mse_ab == mse_ba
        and -1.0 <= dclip <= 1.0
        and scores == (1.0, 0.0, 0.5)
        and elapsed < 1.0
    )
    report(
        7,
        "metrics-sanity",
        ok,
        f"ssim_self={ssim_self:.12f} mse_symmetric={mse_ab == mse_ba} "
        f"dclip={dclip:.4f} aspacc={scores} runtime={elapsed:.3f}s budget=1s",
    )


def _timed_runs(fn, trials=15):
    fn()  # warm caches
    times = []
    for _ in range(trials):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def test_criterion_8_efficiency_shape():
    start = time.perf_counter()
    sc3 = multi_aspect_scenario(3, block_size=16)
    sc1 = multi_aspect_scenario(3, edited=1, block_size=16)
    grid_shape = (1, sc3.world.dimension)

    def make_runner(sc, mode):
        pred = GmmPredictor(sc.world, SCHED)
        branches = plan_branches(sc.plan, sc.masks, beta=1.0, grid_shape=grid_shape)
        z_src = sample_source_latent(sc, seed=0)
        cfg = EngineConfig(
            sampler=SamplerConfig(schedule=SCHED, steps=15, guidance=4.0, seed=0),
            mode=PARALLEL if mode == "repeat" else mode,
        )
        if mode == "repeat":
            return lambda: sequential_repeat_baseline(
                z_src, sc.plan, branches, pred, cfg
            )
        return lambda: run_edit(z_src, sc.plan, branches, pred, cfg)

    t1 = _timed_runs(make_runner(sc1, PARALLEL))
    t3 = _timed_runs(make_runner(sc3, PARALLEL))
    tseq = _timed_runs(make_runner(sc3, "repeat"))
    parallel_ratio = t3 / t1
    seq_ratio = tseq / t1
    elapsed = time.perf_counter() - start
    ok = parallel_ratio <= 1.5 and 2.4 <= seq_ratio <= 3.6 and elapsed < 60.0
    report(
        8,
        "efficiency-shape",
        ok,
        f"t1={t1 * 1e3:.2f}ms t3={t3 * 1e3:.2f}ms tseq={tseq * 1e3:.2f}ms "
        f"parallel_ratio={parallel_ratio:.2f} (<=1.5) "
        f"sequential_ratio={seq_ratio:.2f} (3x +-20%) "
        f"runtime={elapsed:.3f}s budget=60s",
    )


def test_criterion_9_bridge_conformance():
    bridge = pytest.importorskip(
        "aspectedit_bridge", reason="secondary component not built"
    )
    from aspectedit.worlds import two_aspect_world

    start = time.perf_counter()
    world = two_aspect_world()
    local = GmmPredictor(world, SCHED)
    rng = np.random.default_rng(9)

    echo_server = bridge.serve_tcp(bridge.EchoAdapter())
    gmm_server = bridge.serve_tcp(bridge.GmmAdapter(world, SCHED))
    try:
        host, port = echo_server.server_address
        echo_exact = True
        with bridge.BridgeClient(f"{host}:{port}") as client:
            for _ in range(10):
                latent = (
                    rng.standard_normal((1, 1, 4)).astype(np.float32).astype(np.float64)
                )
                eps, _ = client.predict(latent, 500, None)
                echo_exact &= bool(
                    np.array_equal(eps.reshape(latent.shape), latent)
                )

        host, port = gmm_server.server_address
        remote = bridge.RemotePredictor(f"{host}:{port}", SCHED)
        worst = 0.0
        try:
            for i in range(100):
                z = (
                    (0.5 * rng.standard_normal((1, 1, 2)))
                    .astype(np.float32)
                    .astype(np.float64)
                )
                t = int(rng.integers(200, 900))
                cond = (
                    None if i % 2 else Conditioning.from_prompt("the alpha and beta")
                )
                a = local.predict(z, t, cond).epsilon
                b = remote.predict(z, t, cond).epsilon
                worst = max(worst, float(np.max(np.abs(a - b))))
        finally:
            remote.close()
    finally:
        for server in (echo_server, gmm_server):
            server.shutdown()
            server.server_close()
    elapsed = time.perf_counter() - start
    report(
        9,
        "bridge-conformance",
        echo_exact and worst <= 1e-6 and elapsed < 10.0,
        f"echo_bit_exact={echo_exact} remote_max_err={worst:.3e} tol=1e-6 "
        f"runtime={elapsed:.3f}s budget=10s",
    )
