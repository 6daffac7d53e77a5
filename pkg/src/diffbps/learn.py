"""Binary autoencoder: Tx mapping, Rx network, BCE loss, Adam, training loop.

The Tx is a single linear layer acting on one-hot symbol indices, i.e. an
M x 2 lookup table whose rows are the (re, im) coordinates of each label.
It is renormalized to unit mean power on every forward pass. The Rx is a
2 -> 128 -> 128 -> m ReLU network with logistic outputs estimating
P(b_i = 1) for every bit.

Training runs the chosen channel (AWGN, plus Wiener phase noise and the
differentiable BPS, or plus memoryless RPN) between the two networks and
minimizes the masked binary cross-entropy with Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import ChannelConfig, ChannelKind, ConfigError, RngStream, complex_noise, rpn_phases, wiener_phase
from .constellation import Constellation, bits_to_index, from_label_order, gray_qam
from .cpe import BpsConfig, BpsMode, differentiable_bps, temperature_schedule

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
RX_FORMAT_VERSION = 1

# stream ids for the per-step random draws
_BITS, _NOISE, _PHASE = 0, 1, 2


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class DegenerateBatchError(ValueError):
    pass


# -- Tx -------------------------------------------------------------------
@dataclass
class TxParams:
    weights: Tensor  # (M, 2): row i holds the unnormalized point for label i

    @classmethod
    def init(cls, m: int, rng=None, kind: str = "gaussian") -> "TxParams":
        if kind == "qam":
            pts = gray_qam(m).by_label()
            w = np.stack([pts.real, pts.imag], axis=1)
        elif kind == "gaussian":
            gen = np.random.default_rng(rng)
            w = gen.standard_normal((1 << m, 2)) / math.sqrt(2)
        else:
            raise ConfigError(f"unknown Tx initialization {kind!r}")
        return cls(Tensor(w, requires_grad=True))

    @classmethod
    def from_constellation(cls, c: Constellation) -> "TxParams":
        pts = c.by_label()
        return cls(Tensor(np.stack([pts.real, pts.imag], axis=1), requires_grad=True))

    @property
    def order_m(self) -> int:
        return self.weights.shape[0].bit_length() - 1

    def parameters(self) -> list[Tensor]:
        return [self.weights]

    def normalized(self) -> tuple[Tensor, Tensor]:
        """Unit-mean-power point coordinates (re, im), each of shape (M,)."""
        w = self.weights
        scale = ad.sqrt(ad.mean(ad.tsum(ad.square(w), axis=1)))
        wn = w / scale
        return wn[:, 0], wn[:, 1]

    def constellation(self) -> Constellation:
        with ad.no_grad():
            re, im = self.normalized()
        return from_label_order(re.value + 1j * im.value)


def tx_forward(bits, params: TxParams) -> tuple[Tensor, Tensor]:
    """Map (..., m) bit rows (MSB first) to symbols; returns (re, im) tensors."""
    idx = bits_to_index(bits)
    re, im = params.normalized()
    return ad.take(re, idx), ad.take(im, idx)


# -- Rx -------------------------------------------------------------------
@dataclass
class RxParams:
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @classmethod
    def init(cls, m: int, width: int = 128, rng=None) -> "RxParams":
        gen = np.random.default_rng(rng)
        dims = [2, width, width, m]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = gen.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            layers.append((Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)))
        return cls(layers)

    @property
    def order_m(self) -> int:
        return self.layers[-1][0].shape[1]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def save(self, path) -> None:
        arrays = {"version": np.array(RX_FORMAT_VERSION)}
        for i, (w, b) in enumerate(self.layers):
            arrays[f"w{i}"] = w.value
            arrays[f"b{i}"] = b.value
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "RxParams":
        with np.load(path) as data:
            version = int(data["version"])
            if version != RX_FORMAT_VERSION:
                raise ValueError(f"unsupported Rx checkpoint version {version}")
            n = sum(1 for k in data.files if k.startswith("w"))
            layers = [
                (Tensor(data[f"w{i}"], requires_grad=True), Tensor(data[f"b{i}"], requires_grad=True))
                for i in range(n)
            ]
        return cls(layers)


def rx_forward(re, im, params: RxParams) -> Tensor:
    """Per-bit probabilities P(b_i = 1), shape ``re.shape + (m,)``."""
    re, im = ad.as_tensor(re), ad.as_tensor(im)
    lead = re.shape
    h = ad.stack([ad.reshape(re, -1), ad.reshape(im, -1)], axis=1)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < last:
            h = ad.relu(h)
    probs = ad.sigmoid(h)
    return ad.reshape(probs, lead + (probs.shape[-1],))


def rx_probs(symbols, params: RxParams) -> np.ndarray:
    """Graph-free Rx evaluation on complex samples."""
    symbols = np.asarray(symbols)
    with ad.no_grad():
        return rx_forward(symbols.real, symbols.imag, params).value


# -- loss and optimizer ---------------------------------------------------
def bce_loss(probs, bits, mask=None) -> Tensor:
    """Mean binary cross-entropy (nats) over unmasked symbols and all bits."""
    probs = ad.as_tensor(probs)
    bits = np.asarray(bits, dtype=np.float64)
    if mask is None:
        mask = np.ones(bits.shape[:-1], dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), bits.shape[:-1])
    count = int(mask.sum()) * bits.shape[-1]
    if count == 0:
        raise DegenerateBatchError("mask selects no symbols")
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    weight = mask[..., None].astype(np.float64)
    per_bit = ad.log(p) * (bits * weight) + ad.log(1.0 - p) * ((1.0 - bits) * weight)
    return -ad.tsum(per_bit) / count


@dataclass
class AdamState:
    step: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if not state.first:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t = state.step + 1
    new_params, first, second = [], [], []
    for p, g, m1, m2 in zip(params, grads, state.first, state.second):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        m_hat = m1 / (1 - beta1**t)
        v_hat = m2 / (1 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        first.append(m1)
        second.append(m2)
    return new_params, AdamState(t, first, second)


# -- training -------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    m: int = 6
    batch_sequences: int = 32
    sequence_length: int = 256
    steps: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    bps: BpsConfig = field(default_factory=lambda: BpsConfig(mode=BpsMode.SOFT))
    t_start: float = 1.0
    t_end: float = 0.001
    tx_init: str = "gaussian"
    train_tx: bool = True
    rx_width: int = 128

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.batch_sequences < 1 or self.sequence_length < 1 or self.steps < 0:
            raise ConfigError("batch_sequences, sequence_length must be >= 1 and steps >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.t_end <= 0 or self.t_start < self.t_end:
            raise ConfigError("temperatures must satisfy t_start >= t_end > 0")
        if self.tx_init not in ("gaussian", "qam"):
            raise ConfigError(f"unknown tx_init {self.tx_init!r}")
        if self.channel.kind is ChannelKind.WIENER and self.sequence_length <= 2 * self.bps.half_window:
            raise ConfigError(
                f"sequence_length {self.sequence_length} must exceed 2*half_window = {2 * self.bps.half_window}"
            )


@dataclass
class TrainResult:
    constellation: Constellation
    tx: TxParams
    rx: RxParams
    loss_history: list  # (step, loss, temperature)

    def write_loss_csv(self, path) -> None:
        lines = ["step,loss,temperature"]
        lines += [f"{s},{loss!r},{t!r}" for s, loss, t in self.loss_history]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def draw_impairments(channel: ChannelConfig, shape: tuple, rng: RngStream):
    """Pre-drawn ``(noise, theta)`` for a (B, K) batch: complex AWGN and channel phases."""
    noise = complex_noise(shape, channel.noise_variance, rng.child(_NOISE))
    if channel.kind is ChannelKind.RPN_SURROGATE:
        theta = rpn_phases(shape, channel.rpn_sigma, rng.child(_PHASE))
    elif channel.kind is ChannelKind.WIENER:
        theta = wiener_phase(shape[-1], channel.phase_variance, rng.child(_PHASE), batch=shape[:-1])
    else:
        theta = np.zeros(shape)
    return noise, theta


def forward_loss(tx: TxParams, rx: RxParams, bits, noise, theta, kind: ChannelKind,
                 bps_cfg: BpsConfig, temperature: float) -> Tensor:
    """Masked BCE of one batch through Tx, channel, (soft BPS) and Rx.

    ``noise`` and ``theta`` are the already-drawn impairments, which makes the
    loss a deterministic function of the parameters. The Wiener channel runs
    the soft BPS at ``temperature`` and masks the window edges.
    """
    kind = ChannelKind(kind)
    p_re, p_im = tx.normalized()
    idx = bits_to_index(bits)
    x_re, x_im = ad.take(p_re, idx), ad.take(p_im, idx)
    y_re, y_im = x_re + noise.real, x_im + noise.imag
    mask = None
    if kind is not ChannelKind.AWGN_ONLY:
        c, s = np.cos(theta), np.sin(theta)
        y_re, y_im = y_re * c - y_im * s, y_re * s + y_im * c
    if kind is ChannelKind.WIENER:
        soft = replace(bps_cfg, mode=BpsMode.SOFT)
        y_re, y_im, _, mask = differentiable_bps(y_re, y_im, p_re, p_im, soft, temperature)
    return bce_loss(rx_forward(y_re, y_im, rx), bits, mask)


def train(cfg: TrainConfig, tx: TxParams | None = None, rx: RxParams | None = None) -> TrainResult:
    """End-to-end training through the configured channel.

    Deterministic given ``cfg.seed``. ``tx``/``rx`` override the seeded
    initialization (and are updated in place).
    """
    root = RngStream(cfg.seed)
    init_rng = root.child(1_000_000).generator()
    if tx is None:
        tx = TxParams.init(cfg.m, init_rng, cfg.tx_init)
    if rx is None:
        rx = RxParams.init(cfg.m, cfg.rx_width, init_rng)
    params = (tx.parameters() if cfg.train_tx else []) + rx.parameters()
    state = AdamState()
    history = []
    total = max(cfg.steps - 1, 0)
    shape = (cfg.batch_sequences, cfg.sequence_length)
    for step in range(cfg.steps):
        t = temperature_schedule(step, total, cfg.t_start, cfg.t_end)
        rng = root.child(step)
        bits = rng.child(_BITS).generator().integers(0, 2, size=shape + (cfg.m,), dtype=np.int8)
        noise, theta = draw_impairments(cfg.channel, shape, rng)
        for p in params:
            p.zero_grad()
        loss = forward_loss(tx, rx, bits, noise, theta, cfg.channel.kind, cfg.bps, t)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDivergedError(step)
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
        try:
            new_values, state = adam_step([p.value for p in params], grads, state, cfg.learning_rate)
        except FloatingPointError:
            raise TrainingDivergedError(step, "gradient") from None
        for p, v in zip(params, new_values):
            p.value = v
        history.append((step, value, t))
        if step % 100 == 0:
            logger.info("step %d loss %.5f t %.4g", step, value, t)
    return TrainResult(tx.constellation(), tx, rx, history)


def train_rpn_reference(cfg: TrainConfig, **kwargs) -> TrainResult:
    """Reference training on AWGN plus memoryless RPN, no BPS in the loop."""
    return train(replace(cfg, channel=replace(cfg.channel, kind=ChannelKind.RPN_SURROGATE)), **kwargs)
