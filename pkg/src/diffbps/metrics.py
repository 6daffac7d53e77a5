"""BMI/BER estimation, the exact-posterior AWGN oracle and the validation harness."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .channel import RngStream, awgn, noise_variance, sigma_phi, wiener_phase
from .constellation import Constellation, label_bits
from .cpe import BpsConfig, BpsMode, bps
from .learn import PROB_EPS, RxParams, rx_probs

LN2 = math.log(2.0)
ALIGN_SYMBOLS = 1000
SLIP_THRESHOLD = math.pi / 4


def _masked(bits, probs, mask):
    bits = np.asarray(bits)
    probs = np.asarray(probs, dtype=np.float64)
    if bits.shape != probs.shape:
        raise ValueError(f"shape mismatch: bits {bits.shape} vs probs {probs.shape}")
    if mask is None:
        return bits.reshape(-1, bits.shape[-1]), probs.reshape(-1, probs.shape[-1])
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), bits.shape[:-1])
    return bits[mask], probs[mask]


def bmi_from_posteriors(bits, probs, mask=None) -> float:
    """m minus the summed per-bit cross-entropy in bits (unclamped, may go negative).

    Posteriors are clamped to ``[1e-12, 1 - 1e-12]`` exactly like
    :func:`diffbps.learn.bce_loss`, so ``bmi = m - m * bce / ln 2`` holds.
    """
    b, p = _masked(bits, probs, mask)
    if b.shape[0] == 0:
        raise ValueError("no symbols selected")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    q = np.where(b == 1, p, 1.0 - p)
    return float(b.shape[1] + np.sum(np.mean(np.log2(q), axis=0)))


def ber(bits, probs, mask=None) -> float:
    """Hard-decision bit error rate; ``p = 0.5`` decides 0."""
    b, p = _masked(bits, probs, mask)
    return float(np.mean((p > 0.5) != (b == 1)))


def exact_log_likelihoods(y, c: Constellation, snr_db: float) -> np.ndarray:
    """``-|y - x|^2 / sigma^2`` for every sample/point pair, shape ``y.shape + (M,)``."""
    y = np.asarray(y, dtype=np.complex128)
    var = noise_variance(snr_db)
    d = np.abs(y[..., None] - c.points) ** 2
    if var == 0:
        # noiseless limit: all mass on the nearest point
        out = np.full(d.shape, -np.inf)
        np.put_along_axis(out, np.argmin(d, axis=-1)[..., None], 0.0, axis=-1)
        return out
    return -d / var


def exact_posteriors(y, c: Constellation, snr_db: float, chunk: int = 8192) -> np.ndarray:
    """Per-bit P(b_i = 1 | y) for a uniform-input AWGN channel, shape ``y.shape + (m,)``."""
    y = np.asarray(y, dtype=np.complex128)
    flat = y.reshape(-1)
    bits = c.bit_labels.astype(bool)
    out = np.empty((flat.size, c.order_m))
    for start in range(0, flat.size, chunk):
        ll = exact_log_likelihoods(flat[start : start + chunk], c, snr_db)
        total = logsumexp(ll, axis=-1)
        for i in range(c.order_m):
            ones = logsumexp(ll[:, bits[:, i]], axis=-1)
            out[start : start + chunk, i] = np.exp(ones - total)
    return out.reshape(y.shape + (c.order_m,))


class ExactDemapper:
    """Callable demapper using the exact AWGN bit posteriors of ``c`` at ``snr_db``."""

    def __init__(self, c: Constellation):
        self.constellation = c
        self.order_m = c.order_m

    def __call__(self, symbols, snr_db: float) -> np.ndarray:
        return exact_posteriors(symbols, self.constellation, snr_db)


@dataclass
class OracleResult:
    bmi: float
    ci95: float
    num_symbols: int
    mi: float
    mi_ci95: float


def awgn_bmi_oracle(c: Constellation, snr_db: float, num_symbols: int = 200_000, seed: int = 0) -> OracleResult:
    """Monte-Carlo BMI (and MI) of ``c`` on AWGN with exact bit-metric demapping."""
    gen = RngStream(seed).generator()
    labels = gen.integers(0, c.size, num_symbols)
    tx_points = c.by_label()
    x = tx_points[labels]
    y = awgn(x, snr_db, gen)
    bits = label_bits(labels, c.order_m)
    post = np.clip(exact_posteriors(y, c, snr_db), PROB_EPS, 1.0 - PROB_EPS)
    per_symbol_bmi = c.order_m + np.sum(np.log2(np.where(bits == 1, post, 1.0 - post)), axis=-1)

    # symbol-wise posterior of the transmitted point, for the MI >= BMI check
    ll = exact_log_likelihoods(y, c, snr_db)
    true_pos = np.argsort(c.labels)[labels]  # position in c.points of each transmitted label
    log_post = np.take_along_axis(ll, true_pos[:, None], axis=1)[:, 0] - logsumexp(ll, axis=-1)
    per_symbol_mi = c.order_m + np.maximum(log_post, math.log(PROB_EPS)) / LN2

    def ci(v):
        return float(1.96 * v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0

    return OracleResult(float(per_symbol_bmi.mean()), ci(per_symbol_bmi), num_symbols,
                        float(per_symbol_mi.mean()), ci(per_symbol_mi))


# -- validation harness ----------------------------------------------------
@dataclass
class EvalRecord:
    snr_db: float
    linewidth_hz: float
    bmi_mean: float
    bmi_std: float
    ber_mean: float
    runs: int
    symbols_per_run: int
    slips_mean: float = 0.0
    bmi_runs: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class ValidationGrid:
    snr_db: Sequence[float]
    linewidth_hz: Sequence[float]
    runs: int = 100
    symbols_per_run: int = 100_000
    symbol_rate_baud: float = 32e9

    @classmethod
    def standard(cls) -> "ValidationGrid":
        return cls((15.0, 17.0, 20.0), tuple(np.linspace(50e3, 600e3, 10)))


def align_rotation(corrected, reference, head: int = ALIGN_SYMBOLS) -> np.ndarray:
    """Rotate ``corrected`` by the one phase maximizing its correlation with
    ``reference`` over the first ``head`` symbols."""
    corrected = np.asarray(corrected)
    theta = np.angle(np.vdot(corrected[:head], np.asarray(reference)[:head]))
    return corrected * np.exp(1j * theta)


def count_slips(phase_estimates, mask) -> int:
    est = np.asarray(phase_estimates)[np.asarray(mask)]
    return int(np.sum(np.abs(np.diff(est)) > SLIP_THRESHOLD))


def _demap(demapper, symbols, snr_db) -> np.ndarray:
    if isinstance(demapper, RxParams):
        return rx_probs(symbols, demapper)
    return demapper(symbols, snr_db)


def validation_run(c: Constellation, demapper, snr_db: float, linewidth_hz: float,
                   symbols: int, bps_cfg: BpsConfig, symbol_rate_baud: float,
                   rng: RngStream, align: bool = False) -> tuple[float, float, int]:
    """One run: AWGN + Wiener phase noise + hard BPS + demapper. Returns ``(bmi, ber, slips)``."""
    gen = rng.generator()
    labels = gen.integers(0, c.size, symbols)
    x = c.by_label()[labels]
    phi = wiener_phase(symbols, sigma_phi(linewidth_hz, symbol_rate_baud), gen)
    y = awgn(x, snr_db, gen) * np.exp(1j * phi)
    out = bps(y, c, BpsConfig(bps_cfg.num_test_phases, bps_cfg.half_window, BpsMode.HARD))
    mask = out.valid_mask
    corrected = out.corrected[mask]
    if align:
        corrected = align_rotation(corrected, x[mask])
    bits = label_bits(labels[mask], c.order_m)
    probs = _demap(demapper, corrected, snr_db)
    return bmi_from_posteriors(bits, probs), ber(bits, probs), count_slips(out.phase_estimates, mask)


def _run_job(args):
    return validation_run(*args)


def validate(c: Constellation, demapper: RxParams | Callable, grid: ValidationGrid,
             bps_cfg: BpsConfig | None = None, seed: int = 0, align: bool = False,
             jobs: int = 1) -> list[EvalRecord]:
    """Hard-BPS validation over the SNR x linewidth grid, ``grid.runs`` runs per point.

    Every (grid point, run) pair draws from its own random stream, so results
    do not depend on ``jobs``.
    """
    bps_cfg = bps_cfg or BpsConfig()
    order = demapper.order_m
    if order != c.order_m:
        raise ValueError(f"demapper outputs {order} bits but the constellation has m = {c.order_m}")
    if grid.symbols_per_run <= 2 * bps_cfg.half_window:
        raise ValueError("run shorter than the BPS window")
    root = RngStream(seed)
    points = [(s, lw) for s in grid.snr_db for lw in grid.linewidth_hz]
    tasks = []
    for gi, (snr, lw) in enumerate(points):
        point_rng = root.child(gi)
        for run in range(grid.runs):
            tasks.append((c, demapper, snr, lw, grid.symbols_per_run, bps_cfg,
                          grid.symbol_rate_baud, point_rng.child(run), align))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_job(t) for t in tasks]

    records = []
    for gi, (snr, lw) in enumerate(points):
        chunk = np.array(results[gi * grid.runs : (gi + 1) * grid.runs], dtype=np.float64)
        bmis = chunk[:, 0]
        records.append(EvalRecord(
            snr_db=float(snr), linewidth_hz=float(lw),
            bmi_mean=float(bmis.mean()),
            bmi_std=float(bmis.std(ddof=1)) if bmis.size > 1 else 0.0,
            ber_mean=float(chunk[:, 1].mean()),
            runs=grid.runs, symbols_per_run=grid.symbols_per_run,
            slips_mean=float(chunk[:, 2].mean()),
            bmi_runs=bmis.tolist(),
        ))
    return records


def format_table(records: Sequence[EvalRecord]) -> str:
    """Space-separated ``linewidth mean stddev`` table (linewidth in Hz)."""
    lines = ["linewidth mean stddev"]
    for r in sorted(records, key=lambda r: r.linewidth_hz):
        lines.append(f"{r.linewidth_hz:.1f} {r.bmi_mean:.6f} {r.bmi_std:.6f}")
    return "\n".join(lines) + "\n"


def write_tables(records: Sequence[EvalRecord], out_dir, stem: str) -> list[Path]:
    """One table per SNR, named ``<stem>_<snr>dB.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for snr in sorted({r.snr_db for r in records}):
        path = out_dir / f"{stem}_{snr:g}dB.txt"
        path.write_text(format_table([r for r in records if r.snr_db == snr]), encoding="utf-8")
        paths.append(path)
    return paths
