"""Command-line entry point.

Subcommands: ``gen-data``, ``train``, ``eval``, ``export-embeddings``,
``gradcheck`` and ``ctc-oracle``.

Configuration is a flat set of keys (see ``accentrec <cmd> --help``). Values
come from the built-in defaults, then the JSON object in ``--config FILE``,
then command-line flags, later sources overriding earlier ones. Unknown keys
in the file are rejected.

Exit codes: 0 success, 1 usage error, 2 validation or data error, 3 numerical
failure (non-finite loss or a failed numerical check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import AccentrecError, ConfigurationError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("accentrec")


def _key(default, help):
    return field(default=default, metadata={"help": help})


@dataclass
class RunConfig:
    seed: int = _key(7, "single source of randomness (data generation, init, shuffling)")
    # paths
    data_dir: str = _key("data", "directory holding header.json, train.jsonl and dev.jsonl")
    out_dir: str = _key("run", "directory for checkpoint, metrics and exports")
    checkpoint: str = _key("", "checkpoint path (default: <out_dir>/model.ckpt)")
    init_checkpoint: str = _key("", "warm-start checkpoint; tensors with matching name and shape are copied")
    split: str = _key("dev", "manifest split used by eval and export-embeddings")
    embeddings: str = _key("", "export path (default: <out_dir>/embeddings_<split>_<dim>.csv)")
    embed_dim: int = _key(0, "export dimension: 0 = integration output, 2/3 = trained bottleneck")
    # encoder
    stages: int = _key(5, "pool-and-mix stages")
    channels: str = _key("16,32,64,128,256", "comma-separated channels per stage")
    hidden: int = _key(256, "BiGRU width H (embedding dimension)")
    gru_layers: int = _key(1, "many-to-many BiGRU layers in the encoder")
    bottleneck: int = _key(0, "bottleneck head width before the losses: 0, 2 or 3")
    # training
    mode: str = _key("joint", "joint, ctc-pretrain or ar-only")
    lr: float = _key(0.01, "initial Adam learning rate")
    decay: float = _key(0.3, "learning-rate factor after a plateau")
    patience: int = _key(3, "epochs without dev improvement before decay/stop")
    max_epochs: int = _key(100, "epoch cap")
    batch_size: int = _key(16, "utterances per Adam step")
    max_frames: int = _key(1200, "utterances are truncated to this many frames")
    alpha: float = _key(0.4, "CTC weight; the discriminative loss gets 1 - alpha")
    beta: float = _key(0.01, "classifier cross-entropy weight")
    # loss
    loss: str = _key("circle", "softmax, cosface, arcface or circle")
    scale: float = _key(0.0, "scale factor gamma; 0 picks the family default (1/30/30/256)")
    margin: float = _key(0.2, "margin m")
    literal: bool = _key(False, "cosface/arcface: leave negative-class logits unscaled")
    score_mode: str = _key("proxy", "circle scores: proxy (class weights) or pair (within batch)")
    # synthetic corpus
    syn_classes: int = _key(4, "synthetic accent classes")
    syn_utts_per_class: int = _key(60, "utterances per class")
    syn_speakers: int = _key(6, "speakers per class")
    syn_dev_speakers: int = _key(2, "speakers per class held out for dev")
    syn_min_frames: int = _key(320, "shortest utterance")
    syn_max_frames: int = _key(640, "longest utterance")
    syn_dim: int = _key(20, "feature dimension")
    syn_components: int = _key(2, "spectral components per class profile")
    syn_noise: float = _key(0.3, "noise level (0 gives noiseless class profiles)")
    syn_vocab: int = _key(16, "transcript vocabulary size")
    syn_transcript_min: int = _key(3, "shortest transcript")
    syn_transcript_max: int = _key(10, "longest transcript")
    # checks
    grad_seeds: int = _key(50, "random seeds per gradient-check case")
    epsilon: float = _key(1e-5, "finite-difference step")
    grad_tol: float = _key(1e-4, "maximum accepted relative error")
    oracle_grids: int = _key(100, "random grids per (T', |U|, L) configuration")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict, source: str) -> RunConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigurationError(f"{source}: unknown config key {unknown[0]!r}")
        out = {}
        for k, v in values.items():
            out[k] = _coerce(k, known[k].type, v)
        return cls(**out)

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "model.ckpt"

    def embeddings_path(self) -> Path:
        if self.embeddings:
            return Path(self.embeddings)
        return Path(self.out_dir) / f"embeddings_{self.split}_{self.embed_dim}.csv"

    # builders ---------------------------------------------------------------

    def synthetic_spec(self):
        from .data import SyntheticSpec

        return _build("syn_*", lambda: SyntheticSpec(
            num_classes=self.syn_classes, utts_per_class=self.syn_utts_per_class,
            speakers_per_class=self.syn_speakers, dev_speakers_per_class=self.syn_dev_speakers,
            min_frames=self.syn_min_frames, max_frames=self.syn_max_frames, dim=self.syn_dim,
            components=self.syn_components, noise=self.syn_noise, vocab_size=self.syn_vocab,
            transcript_min=self.syn_transcript_min, transcript_max=self.syn_transcript_max, seed=self.seed))

    def encoder_config(self):
        from .encoder import EncoderConfig

        try:
            channels = tuple(int(c) for c in str(self.channels).split(",") if c.strip())
        except ValueError as e:
            raise ConfigurationError(f"config key 'channels': {e}") from e
        return _build("stages/channels/hidden/gru_layers",
                      lambda: EncoderConfig(self.stages, channels, self.hidden, self.gru_layers))

    def train_config(self):
        from .losses import MarginConfig
        from .trainer import MtlWeights, TrainConfig

        loss = _build("loss/scale/margin/literal/score_mode", lambda: MarginConfig(
            self.loss, self.scale or None, self.margin, self.literal, self.score_mode))
        weights = _build("alpha/beta", lambda: MtlWeights(self.alpha, self.beta))
        return _build("lr/decay/patience/max_epochs/batch_size/max_frames/mode", lambda: TrainConfig(
            self.lr, self.decay, self.patience, self.max_epochs, self.batch_size, self.max_frames,
            self.seed, loss, weights, self.mode))


def _build(keys: str, make):
    try:
        return make()
    except ConfigurationError:
        raise
    except (AccentrecError, ValueError, TypeError) as e:
        raise ConfigurationError(f"config keys {keys}: {e}") from e


def _coerce(key, typ, value):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if typ == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            if isinstance(value, bool):
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if typ == "float":
            return float(value)
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"config key {key!r}: {e}") from e


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            file_values = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path}: invalid JSON ({e})") from e
        if not isinstance(file_values, dict):
            raise ConfigurationError(f"config file {path}: expected a JSON object of key/value pairs")
        RunConfig.from_mapping(file_values, str(path))
        values.update(file_values)
    for k in RunConfig.keys():
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    return RunConfig.from_mapping(values, "command line")


# parser -------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _key_parent() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="JSON object of config keys (flags override it)")
    g = p.add_argument_group("config keys")
    defaults = RunConfig()
    for f in fields(RunConfig):
        typ = f.type if isinstance(f.type, str) else f.type.__name__
        meta = {"bool": "BOOL", "int": "INT", "float": "FLOAT"}.get(typ, "STR")
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=meta,
                       help=f"{f.metadata['help']} (default: {getattr(defaults, f.name)!r})")
    return p


COMMANDS = {
    "gen-data": "generate the synthetic accent corpus into data_dir",
    "train": "train a model on data_dir and write the checkpoint and metrics log",
    "eval": "classifier accuracy of a checkpoint on one split",
    "export-embeddings": "write plot-ready embedding rows for one split",
    "gradcheck": "run the finite-difference suite over every loss and the end-to-end scalar",
    "ctc-oracle": "compare CTC forward-backward against exhaustive path enumeration",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="accentrec", description="Accent recognition kit: multitask CTC + metric-loss training.",
                     epilog="Exit codes: 0 success, 1 usage, 2 validation/data, 3 numerical failure.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    parent = _key_parent()
    for name, help in COMMANDS.items():
        sp = sub.add_parser(name, help=help, description=help, parents=[parent])
        if name == "gradcheck":
            sp.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


# commands -----------------------------------------------------------------


def _load_split(cfg: RunConfig, split: str):
    from .data import load_manifest

    return load_manifest(Path(cfg.data_dir) / f"{split}.jsonl")


def cmd_gen_data(cfg: RunConfig, args) -> int:
    from .data import generate_synthetic

    train, dev = generate_synthetic(cfg.synthetic_spec(), cfg.data_dir)
    print(f"wrote {len(train)} train and {len(dev)} dev utterances to {cfg.data_dir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .model import ModelConfig
    from .trainer import METRICS_HEADER, train, write_metrics

    train_set, dev_set = _load_split(cfg, "train"), _load_split(cfg, "dev")
    tcfg = cfg.train_config()
    model = _build("bottleneck", lambda: ModelConfig(cfg.encoder_config(), train_set.vocabulary,
                                                     train_set.labels, cfg.bottleneck))
    init = load_checkpoint(cfg.init_checkpoint) if cfg.init_checkpoint else None
    print(METRICS_HEADER)
    ckpt, metrics = train(train_set, dev_set, model, tcfg, init=init, on_epoch=lambda m: print(m.csv(), flush=True))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", metrics)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    if ckpt is None:
        raise NumericalError("no epoch produced a finite monitored value; no checkpoint written")
    save_checkpoint(ckpt, cfg.checkpoint_path())
    print(f"best epoch {ckpt.metadata['epoch']} dev_accuracy={ckpt.metadata['dev_accuracy']:.6f} "
          f"checkpoint={cfg.checkpoint_path()}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import evaluate

    ckpt = load_checkpoint(cfg.checkpoint_path())
    data = _load_split(cfg, cfg.split)
    res = evaluate(ckpt, data, cfg.max_frames)
    print(json.dumps({"split": cfg.split, "n": len(data), "accuracy": res.accuracy,
                      "confusion": res.confusion.tolist()}, sort_keys=True))
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    from .analysis import export_embeddings, similarity_stats
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(cfg.checkpoint_path())
    data = _load_split(cfg, cfg.split)
    path = cfg.embeddings_path()
    e = export_embeddings(ckpt, data, cfg.embed_dim, path, cfg.max_frames)
    rep = similarity_stats(e)
    print(json.dumps({"path": str(path), "rows": len(e), "columns": e.matrix.shape[1] + 2,
                      "intra_mean": rep.intra_mean, "inter_mean": rep.inter_mean}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .checks import gradcheck_suite

    if not 1e-7 <= cfg.epsilon <= 1e-3:
        raise ConfigurationError(f"config key 'epsilon' must lie in [1e-7, 1e-3], got {cfg.epsilon}")
    if cfg.grad_seeds < 1:
        raise ConfigurationError("config key 'grad_seeds' must be >= 1")
    worst = gradcheck_suite(range(cfg.seed, cfg.seed + cfg.grad_seeds), corrupt=args.corrupt_gradient,
                            epsilon=cfg.epsilon)
    ok = True
    for name, err in worst.items():
        passed = err <= cfg.grad_tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max relative error {err:.3e} over {cfg.grad_seeds} seeds")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_ctc_oracle(cfg: RunConfig, args) -> int:
    from .checks import CTC_TOL, ctc_oracle_sweep

    if cfg.oracle_grids < 1:
        raise ConfigurationError("config key 'oracle_grids' must be >= 1")
    res = ctc_oracle_sweep(cfg.oracle_grids, cfg.seed)
    ok = res["max_abs_diff"] <= CTC_TOL
    print(f"{'PASS' if ok else 'FAIL'} ctc-oracle: max |forward-backward - enumeration| = "
          f"{res['max_abs_diff']:.3e} over {res['instances']} grids in {res['configs']} configurations")
    return EXIT_OK if ok else EXIT_NUMERICAL


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-embeddings": cmd_export,
    "gradcheck": cmd_gradcheck,
    "ctc-oracle": cmd_ctc_oracle,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (AccentrecError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
