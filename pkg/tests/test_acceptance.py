"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are repeated in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from surfseg import BACKEND, d2c, learning, smoothing as sb
from surfseg.cli import main as cli_main
from surfseg.core import GaussianField, Grid2, Kind, PixelSpacing, SurfaceTrace, argmax_surface
from surfseg.geometry import GEOMETRIC_OPS, PolarSpec, augment, from_polar, to_polar
from surfseg.metrics import contour_to_mask, hausdorff, jaccard, pad, umsp
from surfseg.pipeline import infer
from surfseg.predictor import OracleNoiseSpec, PrecomputedMap, oracle_predict
from surfseg.synth import BENCH_A, SynthSpec, gen_image, gen_surface, make_samples, split_samples

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from tests.oracles import LD, central_diff, central_diff_w, dense_h, rel_err, smooth_ld, smooth_step_ld  # noqa: E402

RESULTS: dict[int, str] = {}


def record(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}"
    RESULTS[num] = line
    print(line)
    assert ok, line


def instance(rng, n):
    return rng.uniform(0, 100, n), rng.uniform(0.5, 20, n), float(rng.uniform(0, 10))


# 1 ---------------------------------------------------------------------------

def test_01_solver_matches_dense():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (1, 2, 3, 64, 512):
        for _ in range(100):
            g, s, w = instance(rng, n)
            x = sb.smooth(GaussianField(g, s), w).x
            ref = np.linalg.solve(dense_h(s, w), g / s**2)
            worst = max(worst, rel_err(x, ref))
    g, s, w = instance(rng, 512)
    sys_ = sb.assemble(GaussianField(g, s), w)
    sb.solve(sys_)
    reps = 200
    t0 = time.perf_counter()
    for _ in range(reps):
        sb.solve(sys_)
    per = (time.perf_counter() - t0) / reps
    record(1, "solver oracle equivalence", worst <= 1e-10 and per < 1e-3,
           f"max rel err {worst:.2e} (<= 1e-10) over 500 instances; N1=512 solve {per * 1e6:.0f} us "
           f"(< 1 ms, {BACKEND} kernels)")


# 2 ---------------------------------------------------------------------------

def test_02_global_optimality():
    rng = np.random.default_rng(2)
    worst = math.inf
    for k in range(1000):
        n = int(rng.choice([1, 2, 3, 64, 512])) if k % 10 == 0 else int(rng.integers(1, 65))
        g, s, w = instance(rng, n)
        wrap = bool(rng.integers(2))
        gf = GaussianField(g, s)
        sys_ = sb.assemble(gf, w, wrap)
        x = sb.solve(sys_).x
        e0 = sb.energy(sys_, gf, x)
        d = rng.normal(size=(100, n)) * rng.choice([1e-6, 1e-3, 1.0, 10.0], size=(100, 1))
        xs = x + d
        pair = np.sum(np.diff(xs, axis=1) ** 2, axis=1)
        if sys_.closed:
            pair += (xs[:, 0] - xs[:, -1]) ** 2
        e = np.sum((xs - g) ** 2 / (2 * s**2), axis=1) + w * pair
        worst = min(worst, float(np.min(e - e0)))
    record(2, "global optimality", worst >= -1e-9,
           f"min E(x*+d) - E(x*) = {worst:.3e} (>= -1e-9) over 1000 x 100 perturbations")


# 3 ---------------------------------------------------------------------------

def test_03_positive_pivots():
    rng = np.random.default_rng(3)
    smallest, ratio, count = math.inf, math.inf, 0
    for k in range(1000):
        n = int(rng.integers(1, 300))
        s = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), n))
        w = [0.0, 1e8, float(np.exp(rng.uniform(-12, 12)))][k % 3]
        for wrap in (False, True):
            piv = sb.ldl_pivots(sb.assemble(GaussianField(np.zeros(n), s), w, wrap))
            smallest = min(smallest, float(np.min(piv)))
            ratio = min(ratio, float(np.min(piv * s**2)))
            count += 1
    record(3, "positive-definiteness", smallest > 0,
           f"{count} chain/ring factorisations, sigma in [1e-3, 1e3], w in {{0, 1e8, random}}: "
           f"min pivot {smallest:.3e} (> 0), min pivot * sigma^2 {ratio:.3f}")


# 4 ---------------------------------------------------------------------------

def test_04_gradients():
    rng = np.random.default_rng(4)
    h = 1e-5
    worst = [0.0, 0.0, 0.0]
    for _ in range(100):
        n = int(rng.integers(1, 65))
        g, s = rng.uniform(0, 100, n), rng.uniform(0.5, 5, n)
        w = float(np.exp(rng.uniform(math.log(0.25), math.log(25))))
        wrap = bool(rng.integers(2))
        gf = GaussianField(g, s)
        sys_ = sb.assemble(gf, w, wrap)
        up = rng.normal(size=n)
        grads = sb.backward(sys_, gf, sb.solve(sys_), up)
        upl = up.astype(LD)
        ng = central_diff(lambda v: upl @ smooth_ld(v, s, w, wrap), g, h)
        ns = central_diff(lambda v: upl @ smooth_ld(g, v, w, wrap), s, h)
        nw = central_diff_w(up, g, s, w, h, wrap)
        errs = (rel_err(grads.d_gamma, ng), rel_err(grads.d_sigma, ns), rel_err(grads.d_w, nw))
        worst = [max(a, b) for a, b in zip(worst, errs)]

    spec = SynthSpec(n_cols=40, n_rows=128, amplitude=16, ridge_width=3, seed=4)
    e2e = 0.0
    for k in range(100):
        truth = gen_surface(spec, k).x
        p = oracle_predict(OracleNoiseSpec(0.3, 4.0, seed=k), truth, spec.n_rows, k).data
        log_w = float(rng.uniform(math.log(1e-2), math.log(10)))
        _, _, g_lw = learning.sample_gradient(PrecomputedMap(), p, truth, log_w, want_params=False)
        fit = d2c.fit_map(p)
        wp, wm = np.exp(LD(log_w) + LD(h)), np.exp(LD(log_w) - LD(h))
        step, xm = smooth_step_ld(fit.gamma, fit.sigma, (wp + wm) / 2, (wp - wm) / 2)
        num = float(step @ (2 * xm + step - 2 * np.asarray(truth, dtype=LD)) / (2 * LD(h)))
        e2e = max(e2e, rel_err(g_lw, num))
    ok = max(worst) <= 1e-6 and e2e <= 1e-5
    record(4, "gradient suite", ok,
           f"d_gamma {worst[0]:.1e}, d_sigma {worst[1]:.1e}, d_w {worst[2]:.1e} (<= 1e-6); "
           f"d loss/d log_w {e2e:.1e} (<= 1e-5); 100 instances each, h = 1e-5")


# 5 ---------------------------------------------------------------------------

def test_05_d2c_exactness():
    worst, fits = 0.0, 0
    for n2 in (64, 128, 512):
        j = np.arange(n2, dtype=float)
        for sigma in (1.0, 2.0, 0.1 * n2, 0.3 * n2):
            for gamma in range(1, n2 - 1):
                rep = d2c.fit_column(np.exp(-((j - gamma) ** 2) / (2 * sigma**2)))
                err = math.inf if rep.fallback_used else max(abs(rep.gamma - gamma), abs(rep.sigma - sigma))
                worst = max(worst, err)
                fits += 1
    record(5, "D2C exactness", worst <= 1e-9, f"max |dgamma|, |dsigma| = {worst:.2e} (<= 1e-9) over {fits} columns")


# 6 ---------------------------------------------------------------------------

def test_06_degenerate_limits():
    rng = np.random.default_rng(6)
    exact_w0 = exact_const = True
    dev = 0.0
    for n in (1, 2, 3, 64, 512):
        for _ in range(40):
            g, s, w = instance(rng, n)
            exact_w0 &= np.array_equal(sb.smooth(GaussianField(g, s), 0.0).x, g)
            c = np.full(n, g[0])
            exact_const &= bool(np.all(sb.smooth(GaussianField(c, s), w).x == g[0]))
            mean = np.sum(g / s**2) / np.sum(1 / s**2)
            dev = max(dev, float(np.max(np.abs(sb.smooth(GaussianField(g, s), 1e8).x - mean))))
    record(6, "degenerate limits", exact_w0 and exact_const and dev <= 1e-3,
           f"w=0 gives gamma exactly: {exact_w0}; constant gamma stays constant: {exact_const}; "
           f"w=1e8 max deviation from precision-weighted mean {dev:.1e} (<= 1e-3)")


# 7 ---------------------------------------------------------------------------

def bench_sets(spec, n, corrupt, seed):
    samples = make_samples(spec, n, (0.6, 0.2, 0.2), OracleNoiseSpec(corrupt, 4.0, seed=seed), with_images=False)
    return {k: [(s.probmap, s.truth) for s in split_samples(samples, k)] for k in ("train", "val", "test")}


def test_07_sb_benefit():
    t0 = time.perf_counter()
    spec = SynthSpec(**{**BENCH_A.__dict__, "seed": 11})
    sets = bench_sets(spec, 250, 0.2, 11)
    model = PrecomputedMap()
    cfg = learning.FinetuneConfig(ep_unet=0)
    state, _ = learning.alternate_finetune(sets["train"], sets["val"], learning.init_state(model.params),
                                           cfg, model)
    no_sb = np.mean([umsp(infer(model, p, None).x, t) for p, t in sets["test"]])
    with_sb = np.mean([umsp(infer(model, p, state.w).x, t) for p, t in sets["test"]])
    gain = 1 - with_sb / no_sb
    secs = time.perf_counter() - t0
    record(7, "SB benefit on bench-A", len(sets["test"]) == 50 and gain >= 0.15 and secs < 300,
           f"UMSP {no_sb:.3f} px without SB -> {with_sb:.3f} px with w={state.w:.2e} "
           f"({100 * gain:.1f}% lower, >= 15%), {len(sets['test'])} test samples, {secs:.1f} s (< 300 s)")


# 8 ---------------------------------------------------------------------------

def test_08_prior_adaptation():
    model = PrecomputedMap()
    wins, pairs = 0, []
    for rep in range(10):
        spec = SynthSpec(**{**BENCH_A.__dict__, "seed": 100 + rep})
        ws = []
        for corrupt in (0.05, 0.40):
            sets = bench_sets(spec, 100, corrupt, 100 + rep)
            cfg = learning.FinetuneConfig(ep_unet=0, seed=rep)
            state, _ = learning.alternate_finetune(sets["train"], sets["val"],
                                                   learning.init_state(model.params, seed=rep), cfg, model)
            ws.append(state.w)
        wins += ws[1] > ws[0]
        pairs.append(ws)
    ratio = np.median([b / a for a, b in pairs])
    record(8, "smoothness-prior adaptation", wins >= 9,
           f"w(noisy) > w(clean) in {wins}/10 repetitions (>= 9); median ratio {ratio:.2f}")


# 9 ---------------------------------------------------------------------------

def test_09_loss_identities():
    rng = np.random.default_rng(9)
    zero_iff = True
    for _ in range(200):
        p = rng.dirichlet(np.ones(8), size=5).T
        zero_iff &= learning.kld_loss(p, p)[0] == 0.0
        q = rng.dirichlet(np.ones(8), size=5).T
        zero_iff &= learning.kld_loss(q, p)[0] > 0.0
    mse_err = 0.0
    for _ in range(100):
        x, t = rng.normal(size=20) * 10, rng.normal(size=20) * 10
        _, g = learning.mse_loss(x, t)
        num = central_diff(lambda v: np.sum((v - t.astype(LD)) ** 2), x, 1e-5)
        mse_err = max(mse_err, float(np.max(np.abs(g - num))), float(np.max(np.abs(g - 2 * (x - t)))))
    kld = learning.kld_loss(np.array([[0.25], [0.75]]), np.array([[0.5], [0.5]]))[0]
    ok = zero_iff and mse_err <= 1e-8 and abs(kld - 0.143841) <= 1e-6
    record(9, "loss identities", ok,
           f"KLD zero iff P=T on 200 pairs: {zero_iff}; mse gradient vs FD {mse_err:.1e} (<= 1e-8); "
           f"two-term KLD {kld:.7f} (0.143841 +- 1e-6)")


# 10 --------------------------------------------------------------------------

def metric_fixtures():
    sq = np.zeros((5, 5), bool)
    sq[0:2, 0:2] = True
    sq2 = np.zeros((5, 5), bool)
    sq2[1:3, 0:2] = True
    far = np.zeros((5, 5), bool)
    far[4, 4] = True
    t100 = np.zeros(200, bool)
    t100[:100] = True
    p110 = np.zeros(200, bool)
    p110[:110] = True
    square = [(0.5, 0.5), (3.5, 0.5), (3.5, 3.5), (0.5, 3.5)]
    return [
        umsp([1.0, 2.0], [1.0, 2.0]) == 0,
        umsp([1.0, 1.0], [0.0, 2.0], PixelSpacing(3.24)) == 3.24,
        umsp([2.0, 0.0, -2.0], [0.0, 0.0, 0.0]) == 4 / 3,
        int(contour_to_mask(square, (6, 6)).sum()) == 9,
        not contour_to_mask([(20, 20), (30, 20), (25, 28)], (10, 10)).any(),
        jaccard(sq, sq) == 1,
        jaccard(sq, far) == 0,
        jaccard(sq, sq2) == 2 / 6,
        pad(t100, t100) == 0,
        pad(p110, t100) == 0.10,
        pad(np.zeros(200, bool), t100) == 1.0,
        hausdorff([(1, 2), (3, 4)], [(1, 2), (3, 4)]) == 0,
        hausdorff([(0, 0)], [(3, 4)]) == 5,
        hausdorff([(0, 0), (10, 0)], [(0, 0)]) == 10,
    ]


def test_10_metric_fixtures():
    fixtures = metric_fixtures()
    th = 2 * math.pi * np.arange(256) / 256
    area = contour_to_mask(np.stack([60 + 50 * np.cos(th), 60 + 50 * np.sin(th)], axis=1), (121, 121)).sum()
    area_err = abs(area / (math.pi * 2500) - 1)
    rng = np.random.default_rng(10)
    tri_ok = 0
    for _ in range(1000):
        a, b, c = (rng.normal(size=(int(rng.integers(1, 20)), 2)) * 10 for _ in range(3))
        tri_ok += hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c)
    ok = all(fixtures) and area_err <= 0.01 and tri_ok == 1000
    record(10, "metric fixtures", ok,
           f"{sum(fixtures)}/{len(fixtures)} exact fixtures; 256-gon area error {100 * area_err:.2f}% (<= 1%); "
           f"triangle inequality {tri_ok}/1000")


# 11 --------------------------------------------------------------------------

def test_11_geometry():
    n = 129
    yy, xx = np.mgrid[0:n, 0:n]
    img = np.exp(-((xx - 64) ** 2 + (yy - 64) ** 2) / (2 * 12.0**2))
    spec = PolarSpec.centered(img.shape, 256, 128)
    back = from_polar(to_polar(Grid2(img, Kind.IMAGE), spec), spec, img.shape).data
    inside = np.hypot(xx - 64, yy - 64) < spec.r_max - 1
    rms = float(np.sqrt(np.mean((back - img)[inside] ** 2)))

    synth = SynthSpec(n_cols=128, n_rows=256, amplitude=30, ridge_width=3, image_noise_std=0.0, seed=1)
    t = gen_surface(synth, 0)
    ridge = gen_image(t, synth, 0)
    twice = augment(ridge, t, ["mirror", "mirror"])
    full = augment(ridge, t, [("circ_shift", synth.n_cols)])
    involutions = all(np.array_equal(a.image.data, ridge.data) and np.array_equal(a.truth.x, t.x)
                      for a in (twice, full))
    blank = Grid2(np.zeros((256, 128)), Kind.IMAGE)
    flat = SurfaceTrace(np.full(128, 100.0))
    altered = np.mean([augment(blank, flat, [("salt_pepper", 0.05)], seed=s).flags["altered"] for s in range(200)])
    sp_ok = abs(altered / 1638.4 - 1) <= 0.01
    worst = 0.0
    for op in GEOMETRIC_OPS:
        for seed in range(10):
            out = augment(ridge, t, [op], seed=seed)
            worst = max(worst, umsp(argmax_surface(Grid2(out.image.data, Kind.PROBMAP)), out.truth))
    ok = rms <= 0.02 and involutions and sp_ok and worst <= 0.51
    record(11, "geometry round trip", ok,
           f"polar RMS {100 * rms:.2f}% (<= 2%) at 256x128; involutions {involutions}; "
           f"salt_pepper mean {altered:.0f} (~1638); truth consistency UMSP {worst:.3f} px (<= 0.51)")


# 12 --------------------------------------------------------------------------

CLI_CONFIG = {
    "synth": {"n_cols": 16, "n_rows": 48, "amplitude": 6.0, "ridge_width": 2.0, "seed": 3},
    "dataset": {"n_samples": 10, "split": [0.6, 0.2, 0.2]},
    "oracle": {"corrupt_fraction": 0.3, "position_noise_std": 3.0, "seed": 1},
    "predictor": {"patch_rows": 3, "patch_cols": 3},
    "pretrain": {"lr": 0.05, "epochs": 3, "batch_size": 2},
    "train": {"rounds": 1, "ep_unet": 1, "ep_sb": 2, "lr_predictor": 1e-3, "sigma_rel": 0.05},
}


def run_all_commands(root: Path, capsys) -> dict:
    root.mkdir(parents=True)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CLI_CONFIG))
    common = ["--config", str(cfg), "--seed", "5"]
    data = root / "data"
    manifest = str(data / "manifest.json")
    image = str(data / "samples" / "s0000_image.csv")
    probmap = str(data / "samples" / "s0000_probmap.csv")
    truth = str(data / "samples" / "s0000_truth.csv")
    commands = [
        ["synth", "--out", str(data)],
        ["pretrain", "--manifest", manifest, "--out", str(root / "pre.ckpt")],
        ["finetune", "--manifest", manifest, "--checkpoint", str(root / "pre.ckpt"), "--out", str(root / "fine.ckpt")],
        ["infer", "--model", str(root / "fine.ckpt"), "--image", image, "--out", str(root / "x.csv"), "--report"],
        ["infer", "--model", str(root / "fine.ckpt"), "--manifest", manifest, "--probmap", "--out", str(root / "pred")],
        ["eval", "--pred", str(root / "x.csv"), "--truth", truth, "--out", str(root / "eval.json")],
        ["fit-gauss", "--input", probmap, "--out", str(root / "fit.csv"), "--report"],
        ["smooth", "--input", str(root / "fit.csv"), "--out", str(root / "smooth.csv"), "--w", "0.3", "--energy"],
    ]
    out = {}
    for k, cmd in enumerate(commands):
        code = cli_main(cmd[:1] + common + cmd[1:])
        out[f"{k}:{cmd[0]}:exit"] = str(code).encode()
        out[f"{k}:{cmd[0]}:stdout"] = capsys.readouterr().out.encode()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_12_cli_determinism(tmp_path, capsys):
    a = run_all_commands(tmp_path / "a", capsys)
    b = run_all_commands(tmp_path / "b", capsys)
    codes_ok = all(v == b"0" for k, v in a.items() if k.endswith(":exit"))
    # paths inside stdout differ only through the run directory, which no command prints
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    files = sum(1 for k in a if ":" not in k)
    record(12, "CLI determinism", codes_ok and same,
           f"8 command runs (all 7 commands), {files} output files and stdout byte-identical: {same}; "
           f"all exit 0: {codes_ok}")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
