"""Config-driven experiment runner.

Ties the pipeline together: build an imbalanced split, pretrain the
autoencoder, fit class priors, transfer weights, run one of the training
strategies, and write metrics, histories, checkpoints, and sample grids
under a per-seed artifact layout.
"""

import argparse
import configparser
import csv
import os
import statistics
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .advtrain import (
    STRATEGIES,
    VANILLA,
    WGAN,
    AdvConfig,
    predict_labels,
    train_adversarial,
    train_dso_baseline,
)
from .data import (
    BENCHMARK_TRAIN_COUNTS,
    load_idx,
    make_imbalanced,
    make_synthetic_blobs,
)
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    DataConsistencyError,
    DivergenceError,
    IdxFormatError,
    IdxLengthError,
)
from .metrics import compute_all, confusion
from .nets import (
    arch_preset,
    build_networks,
    load_checkpoint,
    save_checkpoint,
    transfer_init,
)
from .slppl import (
    ClassPriors,
    SlpplConfig,
    fit_class_priors,
    sample_prior,
    train_slppl,
)

DATASETS = ("mnist", "fmnist", "synthetic")
METRIC_COLUMNS = ("acsa", "f_macro", "g_macro", "r_min", "p_maj")

# (ini section, ini key, config attribute, converter)
_FIELDS = [
    ("experiment", "dataset", "dataset", "str"),
    ("experiment", "data_root", "data_root", "str"),
    ("experiment", "out_dir", "out_dir", "str"),
    ("experiment", "strategy", "strategy", "str"),
    ("experiment", "seeds", "seeds", "ints"),
    ("experiment", "per_class_counts", "per_class_counts", "ints"),
    ("experiment", "latent_dim", "latent_dim", "int"),
    ("experiment", "dropout", "dropout", "float"),
    ("experiment", "test_per_class", "test_per_class", "int"),
    ("experiment", "grid_rows", "grid_rows", "int"),
    ("slppl", "epochs", "slppl_epochs", "int"),
    ("slppl", "batch_size", "slppl_batch_size", "int"),
    ("slppl", "lr", "slppl_lr", "float"),
    ("slppl", "prior_epsilon", "prior_epsilon", "float"),
    ("slppl", "prior_diagonal", "prior_diagonal", "bool"),
    ("adversarial", "epochs", "adv_epochs", "int"),
    ("adversarial", "batch_size", "adv_batch_size", "int"),
    ("adversarial", "lr_gen", "lr_gen", "float"),
    ("adversarial", "lr_dis", "lr_dis", "float"),
    ("adversarial", "lr_clf", "lr_clf", "float"),
    ("adversarial", "beta1", "beta1", "float"),
    ("adversarial", "beta2", "beta2", "float"),
    ("adversarial", "gp_gamma", "gp_gamma", "float"),
    ("adversarial", "dis_steps", "dis_steps", "int"),
    ("adversarial", "gen_steps", "gen_steps", "int"),
    ("adversarial", "clf_steps", "clf_steps", "int"),
    ("adversarial", "functional", "functional", "str"),
    ("adversarial", "g_cls_term", "g_cls_term", "str"),
    ("adversarial", "checkpoint_every", "checkpoint_every", "int"),
]

_SCHEMA: dict = {}
for _section, _key, _attr, _kind in _FIELDS:
    _SCHEMA.setdefault(_section, {})[_key] = _kind


@dataclass
class ExperimentConfig:
    """Fully resolved experiment settings (one flat record, INI-backed)."""

    dataset: str
    out_dir: str
    data_root: str = "data"
    strategy: str = "adso"
    seeds: tuple = (0,)
    per_class_counts: tuple | None = None  # None: dataset preset default
    latent_dim: int | None = None
    dropout: float | None = None
    test_per_class: int = 50
    grid_rows: int = 8
    slppl_epochs: int = 30
    slppl_batch_size: int = 64
    slppl_lr: float = 2e-4
    prior_epsilon: float = 1e-4
    prior_diagonal: bool = False
    adv_epochs: int = 100
    adv_batch_size: int = 64
    lr_gen: float = 2e-4
    lr_dis: float = 2e-4
    lr_clf: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gp_gamma: float = 10.0
    dis_steps: int = 1
    gen_steps: int = 1
    clf_steps: int = 1
    functional: str = "vanilla"
    g_cls_term: str = "ce"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got '{self.dataset}'")
        preset = _defaults_for(self.dataset)
        if self.per_class_counts is None:
            self.per_class_counts = preset["per_class_counts"]
        if self.latent_dim is None:
            self.latent_dim = preset["latent_dim"]
        if self.dropout is None:
            self.dropout = preset["dropout"]
        self.seeds = tuple(int(s) for s in self.seeds)
        self.per_class_counts = tuple(int(c) for c in self.per_class_counts)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got '{self.strategy}'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigError(f"seeds must be >= 0, got {self.seeds}")
        if self.dataset in ("mnist", "fmnist") and len(self.per_class_counts) != 10:
            raise ConfigError(
                f"per_class_counts has {len(self.per_class_counts)} entries, "
                f"dataset '{self.dataset}' has 10 classes"
            )
        if len(self.per_class_counts) < 2:
            raise ConfigError("per_class_counts needs at least two classes")
        if min(self.per_class_counts) < 1:
            raise ConfigError("per_class_counts entries must be >= 1")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.functional not in ("vanilla", "wgan"):
            raise ConfigError(f"functional must be 'vanilla' or 'wgan', got '{self.functional}'")
        if self.g_cls_term not in ("ce", "cce"):
            raise ConfigError(f"g_cls_term must be 'ce' or 'cce', got '{self.g_cls_term}'")
        if self.prior_epsilon <= 0:
            raise ConfigError(f"prior_epsilon must be > 0, got {self.prior_epsilon}")
        if self.gp_gamma < 0:
            raise ConfigError(f"gp_gamma must be >= 0, got {self.gp_gamma}")
        for name in ("test_per_class", "grid_rows", "slppl_batch_size", "adv_batch_size",
                     "dis_steps", "gen_steps", "clf_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("slppl_epochs", "adv_epochs", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("slppl_lr", "lr_gen", "lr_dis", "lr_clf"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")

    @property
    def num_classes(self) -> int:
        return len(self.per_class_counts)


def _defaults_for(dataset: str) -> dict:
    preset = arch_preset(dataset)
    benchmark = dataset in ("mnist", "fmnist")
    return {
        "data_root": "data",
        "strategy": "adso",
        "seeds": (0,),
        "per_class_counts": BENCHMARK_TRAIN_COUNTS if benchmark else (100, 10),
        "latent_dim": preset.latent_dim,
        "dropout": preset.classifier_dropout_rate,
        "test_per_class": 50,
        "grid_rows": 8,
        "slppl_epochs": 30,
        "slppl_batch_size": 64,
        "slppl_lr": 2e-4,
        "prior_epsilon": 1e-4,
        "prior_diagonal": False,
        "adv_epochs": 100,
        "adv_batch_size": 64,
        "lr_gen": 2e-4,
        "lr_dis": 2e-4,
        "lr_clf": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "gp_gamma": 10.0,
        "dis_steps": 1,
        "gen_steps": 1,
        "clf_steps": 1,
        "functional": "vanilla",
        "g_cls_term": "ce",
        "checkpoint_every": 0,
    }


def _convert(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            parts = raw.replace(",", " ").split()
            if not parts:
                raise ValueError("empty list")
            return tuple(int(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: expected {kind}, got '{raw}'") from None


def parse_config(path) -> ExperimentConfig:
    """Read an INI experiment file into an ExperimentConfig.

    Strict: unknown sections or keys are errors, as are malformed values.
    Keys left out fall back to defaults (some depend on the dataset preset).
    The DATA_ROOT environment variable, when set, overrides the data root.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"config syntax error: {err}") from None

    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown config section '[{section}]' (have {sorted(_SCHEMA)})"
            )
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section '[{section}]'")
            values[(section, key)] = _convert(
                _SCHEMA[section][key], raw, f"[{section}] {key}"
            )

    dataset = values.get(("experiment", "dataset"))
    if dataset is None:
        raise ConfigError("missing required key 'dataset' in section '[experiment]'")
    if dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got '{dataset}'")
    out_dir = values.get(("experiment", "out_dir"))
    if out_dir is None:
        raise ConfigError("missing required key 'out_dir' in section '[experiment]'")

    defaults = _defaults_for(dataset)
    kwargs = {"dataset": dataset, "out_dir": out_dir}
    for section, key, attr, _kind in _FIELDS:
        if attr in kwargs:
            continue
        kwargs[attr] = values.get((section, key), defaults[attr])
    env_root = os.environ.get("DATA_ROOT")
    if env_root:
        kwargs["data_root"] = env_root
    return ExperimentConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(config: ExperimentConfig, path):
    """Write a complete snapshot that parse_config() reads back as equal."""
    lines = []
    current = None
    for section, key, attr, _kind in _FIELDS:
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{section}]")
            current = section
        lines.append(f"{key} = {_format_value(getattr(config, attr))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config_help() -> str:
    notes = {
        "dataset": "required: mnist | fmnist | synthetic",
        "out_dir": "required: artifact directory",
        "data_root": "default 'data' (env DATA_ROOT overrides)",
        "per_class_counts": (
            "default 4000, 2000, 1000, 750, 500, 350, 200, 100, 60, 40 for "
            "mnist/fmnist (IR 100); 100, 10 for synthetic"
        ),
        "latent_dim": "default 64 for mnist/fmnist; 8 for synthetic",
        "dropout": "default 0.3 for mnist/fmnist; 0.1 for synthetic",
    }
    defaults = _defaults_for("mnist")
    lines = ["config keys (INI sections in brackets):"]
    current = None
    for section, key, attr, _kind in _FIELDS:
        if section != current:
            lines.append(f"  [{section}]")
            current = section
        if attr in notes:
            desc = notes[attr]
        else:
            desc = f"default {_format_value(defaults[attr])}"
        lines.append(f"    {key:<18} {desc}")
    return "\n".join(lines)


def _arch_for(config: ExperimentConfig):
    return replace(
        arch_preset(config.dataset),
        latent_dim=config.latent_dim,
        classifier_dropout_rate=config.dropout,
    )


def _find_idx(dirpath: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = dirpath / name
        if p.is_file():
            return p
    raise FileNotFoundError(f"missing dataset file {dirpath / stem}[.gz]")


def load_eval_set(config: ExperimentConfig, seed: int):
    """Test split: held-out IDX files, or freshly drawn balanced blobs."""
    if config.dataset == "synthetic":
        return make_synthetic_blobs(
            [config.test_per_class] * config.num_classes, seed=[seed, 1]
        )
    d = Path(config.data_root) / config.dataset
    return load_idx(
        _find_idx(d, "t10k-images-idx3-ubyte"), _find_idx(d, "t10k-labels-idx1-ubyte")
    )


def load_split(config: ExperimentConfig, seed: int):
    """Build the imbalanced training split and evaluation set for one seed."""
    if config.dataset == "synthetic":
        src = make_synthetic_blobs(config.per_class_counts, seed=seed)
    else:
        d = Path(config.data_root) / config.dataset
        src = load_idx(
            _find_idx(d, "train-images-idx3-ubyte"),
            _find_idx(d, "train-labels-idx1-ubyte"),
        )
    imb = make_imbalanced(src, config.per_class_counts, seed=seed)
    test = load_eval_set(config, seed)
    print(
        f"[data] {config.dataset} seed={seed}: "
        f"histogram {imb.per_class_counts.tolist()}, IR = {imb.imbalance_ratio:g}"
    )
    return imb, test


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _slppl_config(config: ExperimentConfig, seed: int) -> SlpplConfig:
    return SlpplConfig(
        epochs=config.slppl_epochs,
        batch_size=config.slppl_batch_size,
        lr=config.slppl_lr,
        seed=seed,
    )


def _adv_config(config: ExperimentConfig, seed: int) -> AdvConfig:
    return AdvConfig(
        epochs=config.adv_epochs,
        batch_size=config.adv_batch_size,
        lr_gen=config.lr_gen,
        lr_dis=config.lr_dis,
        lr_clf=config.lr_clf,
        beta1=config.beta1,
        beta2=config.beta2,
        gp_gamma=config.gp_gamma,
        dis_steps=config.dis_steps,
        gen_steps=config.gen_steps,
        clf_steps=config.clf_steps,
        functional=WGAN if config.functional == "wgan" else VANILLA,
        g_cls_term=config.g_cls_term,
        seed=seed,
    )


def _pretrain(config: ExperimentConfig, seed: int, seed_dir: Path, imb):
    """Autoencoder pretraining plus prior fitting; saves its checkpoint."""
    bundle = build_networks(_arch_for(config), imb.num_classes, seed)
    bundle, hist = train_slppl(imb, bundle, _slppl_config(config, seed))
    priors = fit_class_priors(
        imb, bundle, epsilon=config.prior_epsilon, diagonal_only=config.prior_diagonal
    )
    save_checkpoint(seed_dir / "ckpt_slppl.nbnd", bundle, priors)
    _write_csv(
        seed_dir / "slppl_history.csv",
        ("epoch", "l_rec", "l_bce", "l_total"),
        [
            (e, _fmt(hist.l_rec[e]), _fmt(hist.l_bce[e]), _fmt(hist.l_total[e]))
            for e in range(len(hist))
        ],
    )
    if len(hist):
        print(
            f"[slppl] seed {seed}: {len(hist)} epochs, "
            f"l_rec {hist.l_rec[-1]:.4f}, l_bce {hist.l_bce[-1]:.4f}"
        )
    return bundle, priors


def _evaluate(config: ExperimentConfig, bundle, test):
    preds = predict_labels(bundle, test.images)
    cm = confusion(
        test.labels,
        preds,
        config.num_classes,
        class_order=np.asarray(config.per_class_counts),
    )
    return compute_all(cm)


def run_seed(config: ExperimentConfig, seed: int, seed_dir: Path):
    """Full pipeline for one seed; returns the test-set metrics report."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    imb, test = load_split(config, seed)
    bundle, priors = _pretrain(config, seed, seed_dir, imb)
    bundle = transfer_init(bundle)

    on_epoch = None
    if config.checkpoint_every > 0:
        every = config.checkpoint_every

        def on_epoch(epoch, b, _hist):
            if (epoch + 1) % every == 0:
                save_checkpoint(seed_dir / f"ckpt_epoch_{epoch + 1}.nbnd", b, priors)

    adv = _adv_config(config, seed)
    if config.strategy == "dso":
        bundle, hist = train_dso_baseline(
            imb, bundle, adv, eval_data=test, on_epoch=on_epoch
        )
    else:
        bundle, hist = train_adversarial(
            config.strategy, imb, priors, bundle, adv, eval_data=test, on_epoch=on_epoch
        )
    save_checkpoint(seed_dir / "ckpt_best.nbnd", bundle, priors)
    _write_csv(
        seed_dir / "history.csv",
        ("epoch", "l_g", "l_dis", "l_q", "gp", "acsa"),
        [
            (e, _fmt(lg), _fmt(ld), _fmt(lq), _fmt(gp), _fmt(ac))
            for e, lg, ld, lq, gp, ac in hist.rows()
        ],
    )
    emit_sample_grid(bundle, priors, config.grid_rows, seed_dir / "grid.pgm", seed=seed)
    if len(hist):
        print(f"[train] seed {seed} {config.strategy}: best acsa {max(hist.acsa):.4f}")
    return _evaluate(config, bundle, test)


def _print_seed_line(seed: int, strategy: str, report):
    parts = " ".join(f"{k}={v:.4f}" for k, v in report.as_dict().items())
    print(f"[seed {seed}] {strategy}: {parts}")


def _print_summary(strategy: str, reports):
    print(f"[summary] strategy={strategy} over {len(reports)} seed(s)")
    print(f"  {'metric':<8} {'mean':>8} {'min':>8} {'max':>8}")
    for name in METRIC_COLUMNS:
        vals = [getattr(r, name) for _, r in reports]
        print(
            f"  {name:<8} {statistics.fmean(vals):8.4f} "
            f"{min(vals):8.4f} {max(vals):8.4f}"
        )


def _write_metrics_csv(path, strategy: str, reports):
    _write_csv(
        path,
        ("seed", "strategy") + METRIC_COLUMNS,
        [
            (seed, strategy) + tuple(_fmt(getattr(r, name)) for name in METRIC_COLUMNS)
            for seed, r in reports
        ],
    )


def run_experiment(config: ExperimentConfig):
    """Run the pipeline for every configured seed.

    Writes config.snapshot, per-seed artifact folders, and metrics.csv under
    the output directory; prints per-seed and mean/min/max summaries. Returns
    (artifact directory, list of (seed, report)). Identical config and seeds
    reproduce metrics.csv byte for byte.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "config.snapshot")
    reports = []
    for seed in config.seeds:
        report = run_seed(config, seed, out / f"seed_{seed}")
        reports.append((seed, report))
        _print_seed_line(seed, config.strategy, report)
    _write_metrics_csv(out / "metrics.csv", config.strategy, reports)
    _print_summary(config.strategy, reports)
    return out, reports


def emit_sample_grid(bundle, priors, rows_per_class, path, seed: int = 0):
    """Write a grid of generator samples, one class per row, as PGM/PPM.

    Row c holds rows_per_class tiles drawn from class c's prior; pixel values
    are clamped to [0, 1] and scaled to bytes. Output is byte-identical for a
    fixed bundle, priors, and seed.
    """
    if rows_per_class < 1:
        raise ValueError(f"rows_per_class must be >= 1, got {rows_per_class}")
    rows = []
    for c in range(priors.num_classes):
        z = sample_prior(priors, c, rows_per_class, seed=[seed, c])
        with torch.no_grad():
            tiles = bundle.generate(z).numpy()
        rows.append(np.concatenate(list(tiles), axis=1))
    grid = np.concatenate(rows, axis=0)
    data = np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, ch = data.shape
    if ch == 1:
        header, body = f"P5\n{w} {h}\n255\n", data[..., 0]
    elif ch == 3:
        header, body = f"P6\n{w} {h}\n255\n", data
    else:
        raise ValueError(f"sample grid supports 1 or 3 channels, got {ch}")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(body.tobytes())


def _cmd_prepare_data(config: ExperimentConfig) -> int:
    for seed in config.seeds:
        load_split(config, seed)
    return 0


def _cmd_train_slppl(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "config.snapshot")
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        imb, _ = load_split(config, seed)
        _pretrain(config, seed, seed_dir, imb)
    return 0


def _cmd_eval(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    reports = []
    for seed in config.seeds:
        ckpt = out / f"seed_{seed}" / "ckpt_best.nbnd"
        if not ckpt.is_file():
            raise FileNotFoundError(f"missing checkpoint {ckpt}; run 'train' first")
        bundle, _ = load_checkpoint(ckpt, _arch_for(config), config.num_classes, seed=seed)
        test = load_eval_set(config, seed)
        report = _evaluate(config, bundle, test)
        reports.append((seed, report))
        _print_seed_line(seed, config.strategy, report)
    _write_metrics_csv(out / "metrics.csv", config.strategy, reports)
    _print_summary(config.strategy, reports)
    return 0


def _priors_from_arrays(stored: dict) -> ClassPriors:
    counts = stored.get("class_counts")
    if counts is None:
        counts = np.zeros(len(stored["mean"]), dtype=np.int64)
    return ClassPriors(
        mean=stored["mean"],
        cov=stored["cov"],
        epsilon=stored["epsilon"],
        class_counts=counts,
    )


def _cmd_grid(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        best = seed_dir / "ckpt_best.nbnd"
        pretrained = seed_dir / "ckpt_slppl.nbnd"
        ckpt = best if best.is_file() else pretrained
        if not ckpt.is_file():
            raise FileNotFoundError(
                f"no checkpoint under {seed_dir}; run 'train' or 'train-slppl' first"
            )
        bundle, stored = load_checkpoint(
            ckpt, _arch_for(config), config.num_classes, seed=seed
        )
        if stored is None:
            raise CheckpointError(f"{ckpt} holds no prior records; cannot sample classes")
        if ckpt == pretrained:
            # pretraining checkpoints predate weight transfer; mirror the
            # decoder into the generator so samples reflect the trained model
            bundle = transfer_init(bundle)
        emit_sample_grid(
            bundle, _priors_from_arrays(stored), config.grid_rows,
            seed_dir / "grid.pgm", seed=seed,
        )
        print(f"[grid] wrote {seed_dir / 'grid.pgm'}")
    return 0


def _cmd_run_all(config: ExperimentConfig) -> int:
    base = Path(config.out_dir)
    summary = []
    for strategy in STRATEGIES:
        sub = replace(config, strategy=strategy, out_dir=str(base / strategy))
        _, reports = run_experiment(sub)
        summary.append((strategy, reports))
    print(f"[run-all] comparison (mean over {len(config.seeds)} seed(s))")
    print("  " + f"{'strategy':<10}" + "".join(f"{n:>9}" for n in METRIC_COLUMNS))
    for strategy, reports in summary:
        means = [statistics.fmean(getattr(r, n) for _, r in reports) for n in METRIC_COLUMNS]
        print("  " + f"{strategy:<10}" + "".join(f"{m:9.4f}" for m in means))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imbgan",
        description=(
            "Imbalanced image classification trainer: autoencoder pretraining, "
            "class-conditional latent priors, and adversarial oversampling."
        ),
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, metavar="PATH", help="INI config file")
        p.add_argument(
            "--seed", type=int, default=None, metavar="N",
            help="run only this seed (overrides the config seed list)",
        )
        p.add_argument("--out", default=None, metavar="DIR", help="override the output directory")
        return p

    add("prepare-data", "build the imbalanced split and report its class histogram")
    add("train-slppl", "pretrain the autoencoder and fit class priors")
    train = add("train", "full pipeline: pretrain, transfer, strategy training, evaluation")
    train.add_argument(
        "--strategy", choices=STRATEGIES, default=None, help="override the config strategy"
    )
    add("eval", "re-evaluate saved best checkpoints on the test set")
    add("grid", "write generator sample grids from saved checkpoints")
    add("run-all", "run every strategy into per-strategy subdirectories and compare")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config = replace(config, seeds=(args.seed,))
        if args.out is not None:
            config = replace(config, out_dir=args.out)
        if getattr(args, "strategy", None) is not None:
            config = replace(config, strategy=args.strategy)
        if args.command == "prepare-data":
            return _cmd_prepare_data(config)
        if args.command == "train-slppl":
            return _cmd_train_slppl(config)
        if args.command == "train":
            run_experiment(config)
            return 0
        if args.command == "eval":
            return _cmd_eval(config)
        if args.command == "grid":
            return _cmd_grid(config)
        return _cmd_run_all(config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IdxFormatError, IdxLengthError, DataConsistencyError,
            CapacityError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except DivergenceError as err:
        print(f"error: training diverged (epoch {err.epoch}): {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
