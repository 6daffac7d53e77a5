"""Command-line entry point: ``diffbps {train,validate,baseline,export-plotdata}``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

from .channel import ChannelConfig, ChannelKind, ConfigError
from .constellation import ConstellationFormatError, gray_qam
from .constellation import load as load_constellation
from .constellation import save as save_constellation
from .cpe import BpsConfig, BpsMode
from .learn import RxParams, TrainConfig, TrainingDivergedError, train
from .metrics import ExactDemapper, ValidationGrid, awgn_bmi_oracle, validate, write_tables

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

CONSTELLATION_FILE = "constellation.tsv"
RX_FILE = "rx.npz"
LOSS_FILE = "loss.csv"
CONFIG_FILE = "config.json"
TABLE_STEM = "bmi"
BUNDLE_DIR = "plotdata"

MODES = {
    "diff-bps": ChannelKind.WIENER,
    "rpn": ChannelKind.RPN_SURROGATE,
    "awgn": ChannelKind.AWGN_ONLY,
}


@dataclass(frozen=True)
class TrainSettings:
    batch_sequences: int = 32
    sequence_length: int = 256
    steps: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    t_start: float = 1.0
    t_end: float = 0.001
    tx_init: str = "gaussian"
    train_tx: bool = True
    rx_width: int = 128


@dataclass(frozen=True)
class GridSettings:
    snr_db: tuple = (15.0, 17.0, 20.0)
    linewidth_hz: tuple = ValidationGrid.standard().linewidth_hz
    runs: int = 100
    symbols_per_run: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "linewidth_hz", tuple(float(v) for v in self.linewidth_hz))
        if not self.snr_db or not self.linewidth_hz:
            raise ConfigError("validation grid needs at least one SNR and one linewidth")
        if self.runs < 1 or self.symbols_per_run < 1:
            raise ConfigError("validation runs and symbols_per_run must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; serialized as JSON with units in the key names.

    ``bps`` holds the test-phase grid and window shared by training and
    validation; training always runs it in soft mode and validation in hard mode.
    """

    m: int = 6
    seed: int = 0
    output_dir: str = "run"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    bps: BpsConfig = field(default_factory=BpsConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    validation: GridSettings = field(default_factory=GridSettings)

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        # surface invalid combinations (e.g. K <= 2N) at load time
        self.train_config(ChannelKind(self.channel.kind))

    def train_config(self, kind: ChannelKind, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            m=self.m,
            seed=self.seed if seed is None else seed,
            channel=replace(self.channel, kind=kind),
            bps=replace(self.bps, mode=BpsMode.SOFT),
            **asdict(self.train),
        )

    def grid(self) -> ValidationGrid:
        v = self.validation
        return ValidationGrid(v.snr_db, v.linewidth_hz, v.runs, v.symbols_per_run,
                              self.channel.symbol_rate_baud)

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, Enum):
                return obj.value
            if isinstance(obj, dict):
                return {k: plain(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [plain(v) for v in obj]
            return obj

        return plain(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {"channel": ChannelConfig, "bps": BpsConfig, "train": TrainSettings,
                    "validation": GridSettings}
        kwargs = _check_keys(data, cls, "")
        for name, kind in sections.items():
            if name in kwargs:
                if not isinstance(kwargs[name], dict):
                    raise ConfigError(f"{name}: expected an object")
                kwargs[name] = _build(kind, kwargs[name], name)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.loads(text)


def _check_keys(data: dict, kind, prefix: str) -> dict:
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field {prefix}{unknown[0]}")
    return dict(data)


def _build(kind, data: dict, name: str):
    kwargs = _check_keys(data, kind, f"{name}.")
    try:
        return kind(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    kind = MODES[args.mode]
    tcfg = cfg.train_config(kind)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(tcfg)
    save_constellation(result.constellation, out / CONSTELLATION_FILE)
    result.rx.save(out / RX_FILE)
    result.write_loss_csv(out / LOSS_FILE)
    (out / CONFIG_FILE).write_text(cfg.dumps())
    final = result.loss_history[-1][1] if result.loss_history else float("nan")
    oracle = awgn_bmi_oracle(result.constellation, cfg.channel.snr_db, seed=cfg.seed)
    print(f"mode {args.mode}: {tcfg.steps} steps, final loss {final:.5f}")
    print(f"AWGN BMI at {cfg.channel.snr_db:g} dB: {oracle.bmi:.4f} +/- {oracle.ci95:.4f} bit")
    print(f"wrote {out / CONSTELLATION_FILE}, {out / RX_FILE}, {out / LOSS_FILE}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    c = load_constellation(args.constellation)
    demapper = ExactDemapper(c) if args.rx == "exact" else RxParams.load(args.rx)
    bps_cfg = replace(cfg.bps, mode=BpsMode.HARD)
    records = validate(c, demapper, cfg.grid(), bps_cfg, seed=cfg.seed, align=args.align,
                       jobs=args.jobs)
    out = Path(args.out or cfg.output_dir)
    paths = write_tables(records, out, args.stem)
    for r in records:
        print(f"{r.snr_db:g} dB {r.linewidth_hz:g} Hz: BMI {r.bmi_mean:.4f} "
              f"(std {r.bmi_std:.4f}, slips/run {r.slips_mean:g})")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.m % 2:
        raise ConfigError(f"m must be even for square QAM, got {args.m}")
    res = awgn_bmi_oracle(gray_qam(args.m), args.snr_db, args.symbols, seed=args.seed)
    print(f"Gray {2 ** args.m}-QAM at {args.snr_db:g} dB: BMI {res.bmi:.4f} "
          f"+/- {res.ci95:.4f} bit (95% CI, {res.num_symbols} symbols)")
    return EXIT_OK


def cmd_export_plotdata(args) -> int:
    run = Path(args.run_dir)
    tables = sorted(run.glob(f"{TABLE_STEM}*_*dB.txt"))
    missing = [name for name in (CONSTELLATION_FILE,) if not (run / name).is_file()]
    if not tables:
        missing.append(f"{TABLE_STEM}_<snr>dB.txt")
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))
    bundle = Path(args.out) if args.out else run / BUNDLE_DIR
    if bundle.exists():
        shutil.rmtree(bundle)
    bundle.mkdir(parents=True)
    save_constellation(load_constellation(run / CONSTELLATION_FILE), bundle / CONSTELLATION_FILE,
                       precision=8)
    for t in tables:
        shutil.copyfile(t, bundle / t.name)
    if (run / LOSS_FILE).is_file():
        shutil.copyfile(run / LOSS_FILE, bundle / LOSS_FILE)
    print(f"wrote {bundle} ({1 + len(tables)} files)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffbps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a constellation and Rx network")
    p.add_argument("config")
    p.add_argument("--mode", choices=sorted(MODES), default="diff-bps")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="hard-BPS validation over the configured grid")
    p.add_argument("constellation")
    p.add_argument("rx", help="Rx checkpoint (.npz) or 'exact' for the exact AWGN demapper")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="table directory (default: config output_dir)")
    p.add_argument("--stem", default=TABLE_STEM)
    p.add_argument("--align", action="store_true",
                   help="remove one global rotation per run before demapping")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("baseline", help="AWGN BMI of Gray QAM")
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--snr-db", type=float, default=17.0)
    p.add_argument("--symbols", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("export-plotdata", help="collect plot-ready files from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConstellationFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
