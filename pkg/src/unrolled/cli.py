"""Command-line entry point: ``unrolled <subcommand> [--config FILE] [--flags]``.

Configuration comes from a flat ``key=value`` file (``#`` starts a comment);
command-line flags override file values. Every output file is written inside
``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import statistics
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint
from .blocks import BlockVariant, NetworkSpec, StageSpec, block_param_count, init_network
from .data import Dataset, load_idx, make_feature_swap, make_spirals, train_val_split
from .diagnostics import estimation_error_profile, lesion_sweep, shuffle_sweep
from .fusion import FusionProblem, fused_variance, monte_carlo_fusion_check, optimal_weights
from .train import TrainConfig, evaluate, train, write_history_csv

log = logging.getLogger("unrolled")

SUBCOMMANDS = ("train", "eval", "profile", "lesion", "shuffle", "compare-variants", "fusion-demo")
TASKS = ("spirals", "feature-swap", "idx")


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


@dataclass
class RunConfig:
    task: str = "spirals"
    variant: str = "coupled"
    widths: str = "16,12"
    blocks: str = "4,4"
    activation: str = "tanh"
    n_per_class: int = 200
    classes: int = 3
    noise: float = 0.0
    turns: float = 1.0
    n_samples: int = 2000
    dim: int = 8
    images: str = ""
    labels: str = ""
    val_fraction: float = 0.2
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 0.97
    seed: int = 0
    out_dir: str = "runs/latest"
    checkpoint: str = ""
    eval_split: str = "val"
    stage: int = 0
    n_perms: int = 50
    seeds: int = 5
    profile_samples: int = 0
    mc_samples: int = 1_000_000

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                momentum=self.momentum,
                seed=self.seed if seed is None else seed,
                lr_decay=self.lr_decay,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def network_spec(self, input_dim: int, output_dim: int, variant: Optional[str] = None,
                     widths: Optional[tuple] = None, seed: Optional[int] = None) -> NetworkSpec:
        v = BlockVariant.parse(variant or self.variant)
        ws = widths or _int_list(self.widths)
        bs = _int_list(self.blocks)
        if len(ws) != len(bs):
            raise ConfigError(f"widths has {len(ws)} stages but blocks has {len(bs)}")
        try:
            return NetworkSpec(
                input_dim,
                tuple(StageSpec(w, b, v) for w, b in zip(ws, bs)),
                output_dim,
                self.seed if seed is None else seed,
                self.activation,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task: expected one of {', '.join(TASKS)}, got {self.task!r}")
        try:
            BlockVariant.parse(self.variant)
        except ValueError as e:
            raise ConfigError(f"variant: {e}") from None
        try:
            _int_list(self.widths), _int_list(self.blocks)
        except ValueError:
            raise ConfigError("widths/blocks: expected comma-separated integers") from None
        self.network_spec(1, 1)
        self.train_config()
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.eval_split not in ("train", "val"):
            raise ConfigError("eval_split must be 'train' or 'val'")
        for name in ("n_per_class", "classes", "n_samples", "dim", "seeds", "n_perms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        return self


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str, where: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {raw!r} for key {key!r}") from None


def parse_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a ``key=value`` file, apply ``overrides``, validate."""
    values: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw, f"line {lineno}")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig(**values).validate()


def load_task(cfg: RunConfig, seed: Optional[int] = None) -> tuple[Dataset, Dataset]:
    seed = cfg.seed if seed is None else seed
    if cfg.task == "spirals":
        data = make_spirals(cfg.n_per_class, cfg.classes, cfg.noise, seed, cfg.turns)
    elif cfg.task == "feature-swap":
        data = make_feature_swap(cfg.n_samples, cfg.dim, seed)
    else:
        if not cfg.images or not cfg.labels:
            raise ConfigError("task idx needs both images and labels paths")
        for p in (cfg.images, cfg.labels):
            if not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")
        data = load_idx(cfg.images, cfg.labels)
    return train_val_split(data, cfg.val_fraction, seed)


def _eval_data(cfg: RunConfig, train_set: Dataset, val_set: Dataset) -> Dataset:
    if cfg.eval_split == "val" and len(val_set):
        return val_set
    return train_set


def _load_net(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("this subcommand needs --checkpoint")
    if not Path(cfg.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
    return checkpoint.load(cfg.checkpoint)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def cmd_train(cfg: RunConfig) -> int:
    train_set, val_set = load_task(cfg)
    spec = cfg.network_spec(train_set.num_features, train_set.num_classes)
    net, metrics = train(init_network(spec), train_set, cfg.train_config(), val_set)
    out = _out_dir(cfg)
    write_history_csv(out / "metrics.csv", metrics.history)
    checkpoint.save(net, out / "model.ckpt")
    log.info("train accuracy %.4f", metrics.accuracy)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    net = _load_net(cfg)
    train_set, val_set = load_task(cfg)
    rows = []
    for name, ds in (("train", train_set), ("val", val_set)):
        if len(ds):
            m = evaluate(net, ds)
            rows.append((name, m.loss, m.accuracy))
    _write_rows(_out_dir(cfg) / "eval.csv", ["split", "loss", "accuracy"], rows)
    return 0


def cmd_profile(cfg: RunConfig) -> int:
    net = _load_net(cfg)
    ds = _eval_data(cfg, *load_task(cfg))
    n = cfg.profile_samples or len(ds)
    estimation_error_profile(net, ds, min(n, len(ds))).to_csv(_out_dir(cfg) / "profile.csv")
    return 0


def cmd_lesion(cfg: RunConfig) -> int:
    net = _load_net(cfg)
    ds = _eval_data(cfg, *load_task(cfg))
    lesion_sweep(net, ds).to_csv(_out_dir(cfg) / "lesion.csv")
    return 0


def cmd_shuffle(cfg: RunConfig) -> int:
    net = _load_net(cfg)
    ds = _eval_data(cfg, *load_task(cfg))
    if not 0 <= cfg.stage < len(net.spec.stages):
        raise ConfigError(f"stage {cfg.stage} out of range")
    shuffle_sweep(net, ds, cfg.stage, cfg.n_perms, cfg.seed).to_csv(_out_dir(cfg) / "shuffle.csv")
    return 0


def count_parameters(spec: NetworkSpec) -> int:
    total = spec.input_dim * spec.stages[0].width + spec.stages[0].width
    prev = spec.stages[0].width
    for s, st in enumerate(spec.stages):
        if s > 0 and st.width != prev:
            total += prev * st.width + st.width
        total += st.blocks * block_param_count(st.variant, st.width)
        prev = st.width
    return total + prev * spec.output_dim + spec.output_dim


def matched_widths(cfg: RunConfig, variant: BlockVariant, input_dim: int, output_dim: int) -> tuple:
    """Stage widths giving ``variant`` about the parameter count of a one-transform block net.

    The configured widths are the reference for Plain/Residual; gated variants
    shrink every stage by the same factor until the totals are closest.
    """
    base = _int_list(cfg.widths)
    ref = count_parameters(cfg.network_spec(input_dim, output_dim, "residual", base))
    if variant.transforms == 1:
        return base
    best, best_gap = base, None
    for k in range(1, 1001):
        scale = k / 1000.0
        ws = tuple(max(1, int(round(w * scale))) for w in base)
        gap = abs(count_parameters(cfg.network_spec(input_dim, output_dim, variant.value, ws)) - ref)
        if best_gap is None or gap < best_gap:
            best, best_gap = ws, gap
    return best


def compare_variants(cfg: RunConfig, variants=None) -> list:
    """Train every variant on ``cfg.task`` for ``cfg.seeds`` seeds.

    Returns rows ``(rank, variant, widths, params, param_ratio, median_val_acc,
    per_seed_accs)`` sorted best first.
    """
    variants = list(variants or BlockVariant)
    probe_train, _ = load_task(cfg, cfg.seed)
    d_in, d_out = probe_train.num_features, probe_train.num_classes
    ref = count_parameters(cfg.network_spec(d_in, d_out, "residual", _int_list(cfg.widths)))
    results = []
    for v in variants:
        ws = matched_widths(cfg, v, d_in, d_out)
        accs = []
        for k in range(cfg.seeds):
            seed = cfg.seed + k
            train_set, val_set = load_task(cfg, seed)
            spec = cfg.network_spec(d_in, d_out, v.value, ws, seed)
            net, _ = train(init_network(spec), train_set, cfg.train_config(seed))
            accs.append(evaluate(net, val_set if len(val_set) else train_set).accuracy)
        params = count_parameters(cfg.network_spec(d_in, d_out, v.value, ws))
        results.append((v, ws, params, params / ref, statistics.median(accs), accs))
    results.sort(key=lambda r: -r[4])
    return [(i + 1,) + r for i, r in enumerate(results)]


def cmd_compare_variants(cfg: RunConfig) -> int:
    rows = compare_variants(cfg)
    out_rows = [
        (rank, v.value, "x".join(map(str, ws)), params, ratio, med, ";".join(repr(a) for a in accs))
        for rank, v, ws, params, ratio, med, accs in rows
    ]
    header = ["rank", "variant", "widths", "params", "param_ratio", "median_val_acc", "val_accs"]
    _write_rows(_out_dir(cfg) / "variants.csv", header, out_rows)
    return 0


FUSION_DEMO_PROBLEMS = (
    (1.0, 1.0, 0.0),
    (1.0, 3.0, 0.0),
    (2.0, 2.0, 1.0),
    (1.0, 4.0, 0.5),
    (1.0, 4.0, 1.5),
    (0.5, 2.0, -0.5),
)


def fusion_table(n: int, seed: int) -> list:
    rows = []
    for i, (va, vb, cab) in enumerate(FUSION_DEMO_PROBLEMS):
        p = FusionProblem(va, vb, cab)
        w = optimal_weights(p)
        mc = monte_carlo_fusion_check(p, n, seed + i)
        rows.append((va, vb, cab, w.q1, fused_variance(p, w), mc["empirical_variance"]))
    return rows


def cmd_fusion_demo(cfg: RunConfig) -> int:
    rows = fusion_table(cfg.mc_samples, cfg.seed)
    header = ["var_a", "var_b", "cov_ab", "q1", "fused_variance", "mc_variance"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    text = buf.getvalue()
    sys.stdout.write(text)
    (_out_dir(cfg) / "fusion.csv").write_text(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "lesion": cmd_lesion,
    "shuffle": cmd_shuffle,
    "compare-variants": cmd_compare_variants,
    "fusion-demo": cmd_fusion_demo,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    defaults = RunConfig()
    parser = _Parser(
        prog="unrolled",
        description="Highway/Residual block engine and iterative-estimation diagnostics.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=SUBCOMMANDS, help="subcommand to run")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        parser.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            type=type(f.default),
            default=None,
            help=f"(default: {getattr(defaults, f.name)!r})",
        )
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(message)s",
        )
        overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
        cfg = parse_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"unrolled: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"unrolled: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
