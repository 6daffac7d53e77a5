"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through the ``verdict`` fixture; the lines
are repeated in the pytest terminal summary.
"""

import hashlib
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from diffbps import autodiff as ad
from diffbps.autodiff import Tensor, numerical_gradient, relative_error
from diffbps.channel import (
    ChannelConfig,
    ChannelKind,
    RngStream,
    apply_phase,
    awgn,
    noise_variance,
    sigma_phi,
    wiener_phase,
)
from diffbps.constellation import from_label_order, gray_qam, load, normalize, save
from diffbps.cpe import (
    BpsConfig,
    bps,
    soft_select_tensor,
    softmin_t,
    softmin_tensor,
    unwrap,
    window_sum_tensor,
    window_sums,
)
from diffbps.learn import (
    RxParams,
    TrainConfig,
    TxParams,
    bce_loss,
    draw_impairments,
    forward_loss,
    rx_forward,
    train,
    tx_forward,
)
from diffbps.metrics import (
    ExactDemapper,
    ValidationGrid,
    awgn_bmi_oracle,
    bmi_from_posteriors,
    validate,
    write_tables,
)

from test_metrics import quadrature_bmi

GRID_SPACING = 2 * math.pi / 60


def test_criterion_1_soft_hard_consistency(verdict):
    start = time.perf_counter()
    c = gray_qam(6)
    n = 10_000
    rng = np.random.default_rng(1)
    x = c.points[rng.integers(0, 64, n)]
    phi = wiener_phase(n, sigma_phi(100e3, 32e9), RngStream(1, 1))
    z = awgn(apply_phase(x, phi), 20.0, RngStream(1, 2))
    hard = bps(z, c, BpsConfig(60, 60, "hard"))
    soft = bps(z, c, BpsConfig(60, 60, "soft", 0.001))
    # whole turns between the unwrapped tracks are the same rotation
    diff = np.angle(np.exp(1j * (hard.phase_estimates - soft.phase_estimates)))
    agree = float(np.mean(np.abs(diff[hard.valid_mask]) < GRID_SPACING))
    elapsed = time.perf_counter() - start
    verdict("criterion 1 soft/hard BPS consistency", agree >= 0.95 and elapsed < 60,
            f"agreement {agree:.4f} (need >= 0.95), {elapsed:.1f} s (need < 60 s)")


def test_criterion_2_gradient_integrity(verdict):
    rng = np.random.default_rng(11)
    errors = {}

    # full chain: M = 4, K = 16, L = 8, N = 2, t = 0.5
    tx = TxParams.init(2, rng)
    rx = RxParams.init(2, 8, rng)
    bits = rng.integers(0, 2, (2, 16, 2))
    channel = ChannelConfig(snr_db=12, linewidth_hz=5e8, kind="wiener")
    noise, theta = draw_impairments(channel, (2, 16), RngStream(4))
    cfg = BpsConfig(8, 2, "soft", 0.5)

    def chain():
        return forward_loss(tx, rx, bits, noise, theta, ChannelKind.WIENER, cfg, 0.5)

    chain().backward()
    analytic = tx.weights.grad.copy()
    with ad.no_grad():
        numeric = numerical_gradient(lambda: chain().value, tx.weights.value, eps=1e-6)
    errors["full chain"] = relative_error(analytic, numeric, floor=1e-6)

    def layer(name, fn, param):
        param.grad = None
        fn().backward()
        analytic = param.grad.copy()
        with ad.no_grad():
            numeric = numerical_gradient(lambda: fn().value, param.value)
        errors[name] = relative_error(analytic, numeric, floor=1e-7)

    w = rng.standard_normal((16, 4, 2))
    tx_layer = TxParams.init(3, rng)
    tx_bits = rng.integers(0, 2, (40, 3))
    layer("tx", lambda: ad.tsum(ad.square(tx_forward(tx_bits, tx_layer)[0]) * 1.5
                                + tx_forward(tx_bits, tx_layer)[1]), tx_layer.weights)

    rx_layer = RxParams.init(2, 4, rng)
    for _, b in rx_layer.layers:
        b.value[:] = rng.uniform(-0.5, 0.5, b.value.shape)
    y_re, y_im = rng.standard_normal(30), rng.standard_normal(30)
    rx_bits = rng.integers(0, 2, (30, 2))
    for i, p in enumerate(rx_layer.parameters()):
        layer(f"rx param {i}", lambda: bce_loss(rx_forward(y_re, y_im, rx_layer), rx_bits), p)

    d = Tensor(rng.uniform(0, 2, (16, 4, 2)), requires_grad=True)
    layer("window sum", lambda: ad.tsum(window_sum_tensor(d, 2, 0) * w), d)
    s = Tensor(rng.uniform(0, 3, (10, 8)), requires_grad=True)
    v = rng.standard_normal((10, 8))
    layer("softmin", lambda: ad.tsum(softmin_tensor(s, 0.5) * v), s)
    phases = np.linspace(-3, 3, 8)
    layer("soft select", lambda: ad.tsum(ad.square(soft_select_tensor(s, phases, 0.5))), s)

    layer_err = max(e for k, e in errors.items() if k != "full chain")
    ok = errors["full chain"] < 1e-3 and layer_err < 1e-4
    verdict("criterion 2 gradient integrity", ok,
            f"full chain {errors['full chain']:.2e} (need < 1e-3), worst layer {layer_err:.2e} (need < 1e-4)")


def test_criterion_3_oracle_equivalence(verdict):
    c = gray_qam(2)
    exact = quadrature_bmi(c, 0.0)
    est = awgn_bmi_oracle(c, 0.0, 400_000, seed=3).bmi
    rng = np.random.default_rng(0)
    exact_sums = True
    for _ in range(50):
        k, n = int(rng.integers(1, 40)), int(rng.integers(0, 25))
        d = rng.integers(-1000, 1000, (k, 3))
        naive = np.stack([d[max(0, i - n): i + n + 1].sum(axis=0) for i in range(k)])
        exact_sums &= np.array_equal(window_sums(d, n, axis=0), naive)
    ok = abs(est - exact) < 0.01 and exact_sums
    verdict("criterion 3 oracle equivalence", ok,
            f"oracle {est:.4f} vs quadrature {exact:.4f} (need |diff| < 0.01); "
            f"integer window sums exact: {exact_sums}")


def test_criterion_4_channel_statistics(verdict):
    n = 1_000_000
    noise = awgn(np.zeros(n, dtype=complex), 17.0, RngStream(3))
    var = float(np.mean(np.abs(noise) ** 2))
    inc = np.diff(wiener_phase(n + 1, sigma_phi(100e3, 32e9), RngStream(5)))
    inc_var = float(np.var(inc))
    ok = abs(var / 10**-1.7 - 1) < 0.01 and abs(inc_var / 1.9635e-5 - 1) < 0.05
    verdict("criterion 4 channel statistics", ok,
            f"AWGN variance {var:.6f} vs {noise_variance(17.0):.6f} (1 %), "
            f"Wiener increment variance {inc_var:.4e} vs 1.9635e-05 (5 %)")


def test_criterion_5_protocol_shape(verdict, tmp_path):
    rng = np.random.default_rng(1)
    c = from_label_order(normalize(gray_qam(6).points + 0.1 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))))
    grid = ValidationGrid((15.0, 17.0, 20.0), (50e3, 300e3, 600e3), runs=10, symbols_per_run=10_000)
    start = time.perf_counter()
    records = validate(c, ExactDemapper(c), grid, BpsConfig(60, 60), seed=0)
    paths = write_tables(records, tmp_path, "bmi")
    elapsed = time.perf_counter() - start
    rows = []
    for p in paths:
        lines = p.read_text().splitlines()
        assert lines[0] == "linewidth mean stddev"
        rows += [list(map(float, ln.split())) for ln in lines[1:]]
    ok = (len(paths) == 3 and len(rows) == 9 and all(r[2] > 0 for r in rows) and elapsed < 600)
    verdict("criterion 5 protocol shape", ok,
            f"{len(paths)} tables, {len(rows)} rows, min stddev {min(r[2] for r in rows):.4f}, "
            f"{elapsed:.1f} s (need < 600 s)")


# Criterion 6 trains three 64-point systems. Artifacts are cached by a hash of
# the training configuration so reruns only repeat validation.
CACHE = Path(os.environ.get("DIFFBPS_ACCEPTANCE_CACHE", Path(__file__).resolve().parents[1] / ".acceptance_cache"))
TRAIN_STEPS = 3000
# the receiver is still far from converged after 3000 steps at 1e-3
TRAIN_LR = 3e-3
TRAIN_BUDGET_S = 30 * 60


def _trained(cfg: TrainConfig):
    key = hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]
    run = CACHE / key
    if (run / "constellation.tsv").is_file() and (run / "rx.npz").is_file():
        seconds = float((run / "seconds").read_text())
        return load(run / "constellation.tsv"), RxParams.load(run / "rx.npz"), seconds
    start = time.process_time()
    res = train(cfg)
    seconds = time.process_time() - start
    run.mkdir(parents=True, exist_ok=True)
    save(res.constellation, run / "constellation.tsv")
    res.rx.save(run / "rx.npz")
    res.write_loss_csv(run / "loss.csv")
    (run / "config.txt").write_text(repr(cfg) + "\n")
    (run / "seconds").write_text(f"{seconds:.1f}\n")
    return res.constellation, res.rx, seconds


def test_criterion_6_training_efficacy(verdict):
    base = TrainConfig(m=6, steps=TRAIN_STEPS, seed=0, learning_rate=TRAIN_LR)
    systems = {
        "diff-bps": base,
        "rpn": replace(base, channel=replace(base.channel, kind=ChannelKind.RPN_SURROGATE)),
        "gray+rx": replace(base, tx_init="qam", train_tx=False),
    }
    trained = {name: _trained(cfg) for name, cfg in systems.items()}
    cfg = BpsConfig(60, 60)
    at17 = ValidationGrid((17.0,), (100e3,), runs=10, symbols_per_run=10_000)
    at20 = ValidationGrid((20.0,), tuple(np.arange(1, 7) * 100e3), runs=10, symbols_per_run=10_000)
    # the Gray baseline needs one global rotation removed per run; apply it to both sides
    bmi17 = {k: validate(c, rx, at17, cfg, seed=6, align=True)[0].bmi_mean
             for k, (c, rx, _) in trained.items()}
    bmi20 = {k: float(np.mean([r.bmi_mean for r in validate(c, rx, at20, cfg, seed=6)]))
             for k, (c, rx, _) in trained.items() if k != "gray+rx"}
    budget = {k: s for k, (_, _, s) in trained.items()}
    gain = bmi20["diff-bps"] - bmi20["rpn"]
    in_budget = all(s <= TRAIN_BUDGET_S for s in budget.values())
    band = "inside" if 0.05 <= gain <= 0.15 else "outside"
    ok_a = bmi17["diff-bps"] >= bmi17["gray+rx"] and in_budget
    ok_b = gain >= 0.0 and in_budget
    times = ", ".join(f"{k} {s / 60:.1f} min" for k, s in budget.items())
    verdict("criterion 6a diff-BPS vs Gray-QAM with trained Rx (17 dB, 100 kHz)", ok_a,
            f"{bmi17['diff-bps']:.4f} vs {bmi17['gray+rx']:.4f} bit; training CPU {times}")
    verdict("criterion 6b diff-BPS vs RPN reference (20 dB, 100-600 kHz)", ok_b,
            f"mean {bmi20['diff-bps']:.4f} vs {bmi20['rpn']:.4f} bit, gain {gain:+.4f} "
            f"(need >= 0, target +0.05..+0.15: {band})")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def _invariants_hold(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5, (4, 9))
    t = float(rng.uniform(0.01, 3))
    y = softmin_t(x, t)
    assert np.allclose(y.sum(axis=-1), 1) and np.all(y >= 0)
    assert np.allclose(softmin_t(x + rng.uniform(-100, 100), t), y)
    assert np.array_equal(np.argmax(softmin_t(x, 1e-6), axis=-1), np.argmin(x, axis=-1))
    assert np.allclose(softmin_t(x, 1e6), 1 / 9, atol=1e-5)

    phi = np.cumsum(rng.uniform(-3, 3, 50))
    wrapped = np.angle(np.exp(1j * phi))
    u = unwrap(wrapped)
    assert np.all(np.abs(np.diff(u)) <= math.pi + 1e-9)
    assert np.allclose(np.exp(1j * u), np.exp(1j * wrapped))

    pts = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    assert np.allclose(normalize(normalize(pts)), normalize(pts), rtol=1e-14, atol=1e-15)

    m = int(rng.integers(1, 8))
    bits = rng.integers(0, 2, (30, m))
    probs = rng.uniform(0, 1, (30, m))
    bce = float(bce_loss(probs, bits).value)
    assert abs(bmi_from_posteriors(bits, probs) + m * bce / math.log(2) - m) < 1e-9


def test_criterion_7_invariant_suite(verdict):
    failures = []
    try:
        _invariants_hold()
    except AssertionError as exc:
        failures.append(f"property: {exc}")
    cfg = TrainConfig(m=2, steps=4, batch_sequences=2, sequence_length=32, rx_width=8,
                      bps=BpsConfig(8, 4, "soft"), seed=5)
    if train(cfg).loss_history != train(cfg).loss_history:
        failures.append("training not deterministic by seed")
    c = gray_qam(2)
    grid = ValidationGrid((10.0,), (100e3,), runs=3, symbols_per_run=500)
    a = validate(c, ExactDemapper(c), grid, BpsConfig(16, 8), seed=2)
    b = validate(c, ExactDemapper(c), grid, BpsConfig(16, 8), seed=2, jobs=2)
    if a != b:
        failures.append("validation not deterministic by seed")
    verdict("criterion 7 invariant suite", not failures,
            "; ".join(failures) or "softmin, unwrap, normalization, BMI/BCE identity and seeding hold")
