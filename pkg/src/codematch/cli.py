"""Command-line workflows: prepare datasets, run training modes, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes a manifest.json capturing the config, the seed, and
SHA-256 hashes of inputs and produced artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from pathlib import Path

import click

from . import corpus, evaluation, training
from .model import VocabMismatchError, load_checkpoint, save_checkpoint
from .synthetic import make_synthetic_corpus
from .training import TrainConfig, TrainingDiverged

MODES = ("pretrain-qc", "pretrain-qd", "adv", "adv-no-rr", "adv-no-as", "mtl-dcs", "qd-adv")

_SAMPLER_OF_MODE = {
    "pretrain-qc": "uniform",
    "pretrain-qd": "uniform",
    "adv": "adversarial",
    "adv-no-rr": "adversarial",
    "adv-no-as": "uniform",
    "mtl-dcs": "uniform",
    "qd-adv": "adversarial",
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, artifacts, extra=None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "artifacts": {Path(p).name: _sha256(Path(p)) for p in artifacts},
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# config file handling: flat "key = value" lines, '#' comments
# ---------------------------------------------------------------------------


def _parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_DEFAULT_CONFIG = TrainConfig()


def _coerce(key: str, raw: str):
    if not hasattr(_DEFAULT_CONFIG, key):
        raise click.UsageError(f"unknown config key {key!r}")
    current = getattr(_DEFAULT_CONFIG, key)
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise click.UsageError(f"config key {key!r}: cannot parse {raw!r}")
    return raw


def _build_config(config_path, overrides, seed) -> TrainConfig:
    values: dict[str, str] = {}
    if config_path:
        values.update(_parse_config_file(Path(config_path)))
    for item in overrides:
        if "=" not in item:
            raise click.UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    kwargs = {key: _coerce(key, value) for key, value in values.items()}
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid configuration: {exc}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Train and evaluate question-to-code retrieval models."""


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Directory holding qc.jsonl and, optionally, qd.jsonl.")
@click.option("--synthetic", "synthetic_km", nargs=2, type=int, default=None, metavar="K M",
              help="Generate K intents x M paraphrases instead of reading --data.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--pool-negatives", default=49, show_default=True, type=int)
@click.option("--min-freq", default=1, show_default=True, type=int)
@click.option("--max-vocab", default=50000, show_default=True, type=int)
def prepare(data_dir, synthetic_km, out_dir, seed, pool_negatives, min_freq, max_vocab):
    """Split, index, and pool the datasets into reproducible artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs: list[Path] = []
    intent_of = None
    if synthetic_km and data_dir:
        raise click.UsageError("--data and --synthetic are mutually exclusive")
    if synthetic_km:
        n_intents, per_intent = synthetic_km
        generated = make_synthetic_corpus(n_intents, per_intent, seed=seed)
        qc_pairs, qd_pairs, intent_of = generated.qc_pairs, generated.qd_pairs, generated.intent_of
    elif data_dir:
        qc_path = Path(data_dir) / "qc.jsonl"
        qd_path = Path(data_dir) / "qd.jsonl"
        try:
            qc_pairs = corpus.load_qc(qc_path)
            qd_pairs = corpus.load_qd(qd_path) if qd_path.exists() else []
        except (FileNotFoundError, corpus.DatasetError) as exc:
            raise click.ClickException(str(exc))
        inputs.append(qc_path)
        if qd_path.exists():
            inputs.append(qd_path)
    else:
        raise click.UsageError("provide --data DIR or --synthetic K M")
    try:
        prepared = corpus.prepare_data(
            qc_pairs, qd_pairs, seed=seed, pool_negatives=pool_negatives,
            min_freq=min_freq, max_vocab=max_vocab,
        )
        written = corpus.save_prepared(prepared, out)
    except corpus.DatasetError as exc:
        raise click.ClickException(str(exc))
    artifacts = list(written.values())
    if intent_of is not None:
        labels_path = out / "intents.csv"
        lines = ["id,intent"] + [f"{pid},{intent}" for pid, intent in sorted(intent_of.items())]
        labels_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        artifacts.append(labels_path)
    settings = {
        "seed": seed, "pool_negatives": pool_negatives, "min_freq": min_freq,
        "max_vocab": max_vocab, "synthetic": list(synthetic_km) if synthetic_km else None,
    }
    _write_manifest(out, "prepare", settings, seed, inputs, artifacts)
    click.echo(
        f"prepared {len(prepared.qc_train)}/{len(prepared.qc_dev)}/{len(prepared.qc_test)} QC records "
        f"and {len(prepared.qd_train)}/{len(prepared.qd_dev)}/{len(prepared.qd_test)} QD records -> {out}"
    )


@main.command()
@click.option("--mode", required=True, type=click.Choice(MODES))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory written by 'prepare'.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat key = value file mirroring the training config.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Config override; may be given multiple times.")
@click.option("--qc-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--qd-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
def train(mode, data_dir, out_dir, config_path, seed, overrides, qc_checkpoint, qd_checkpoint):
    """Run one training mode; writes checkpoint, history CSV, and curve figure."""
    cfg = _build_config(config_path, overrides, seed)
    ablation_of_mode = {"adv": "full", "adv-no-rr": "no_rr", "adv-no-as": "no_rr_no_as"}
    if mode in ablation_of_mode:
        cfg = dataclasses.replace(cfg, ablation=ablation_of_mode[mode])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = corpus.load_prepared(Path(data_dir))

    def _load(path, label):
        if path is None:
            raise click.UsageError(f"--mode {mode} requires --{label}")
        try:
            model, _ = load_checkpoint(path, vocab=data.vocab)
        except VocabMismatchError as exc:
            raise click.ClickException(str(exc))
        return model

    generator = None
    try:
        if mode == "pretrain-qc":
            model, history = training.pretrain_qc(data, cfg)
        elif mode == "pretrain-qd":
            model, history = training.pretrain_qd(data, _load(qc_checkpoint, "qc-checkpoint"), cfg)
        elif mode == "mtl-dcs":
            model, history = training.train_mtl_dcs(data, cfg)
        elif mode == "qd-adv":
            qc_model = _load(qc_checkpoint, "qc-checkpoint")
            qd_model = _load(qd_checkpoint, "qd-checkpoint")
            model, history = training.train_qd_adversarial(data, qc_model, qd_model, cfg)
        else:
            qc_model = _load(qc_checkpoint, "qc-checkpoint")
            qd_model = None
            if cfg.ablation == "full":
                qd_model = _load(qd_checkpoint, "qd-checkpoint")
            elif qd_checkpoint is not None:
                qd_model = _load(qd_checkpoint, "qd-checkpoint")
            model, generator, history = training.train_adversarial(data, qc_model, qd_model, cfg)
    except (TrainingDiverged, corpus.DatasetError, VocabMismatchError, ValueError) as exc:
        raise click.ClickException(str(exc))

    checkpoint_path = out / "checkpoint.pt"
    save_checkpoint(checkpoint_path, model, cfg, extra={"mode": mode})
    artifacts = [checkpoint_path]
    if generator is not None and not generator.tied:
        generator_path = out / "generator.pt"
        save_checkpoint(generator_path, generator.model, cfg, extra={"mode": mode, "role": "generator"})
        artifacts.append(generator_path)
    history_path = out / "history.csv"
    evaluation.export_curves(history, history_path, plot=True)
    artifacts += [history_path, out / "history.png"]
    _write_manifest(
        out, "train", dataclasses.asdict(cfg), cfg.seed, [], artifacts,
        extra={"mode": mode, "sampler": _SAMPLER_OF_MODE[mode], "best_dev_map": history.best_map()},
    )
    click.echo(f"mode {mode}: best dev MAP {history.best_map():.4f} over {len(history) - 1} epochs -> {out}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--task", type=click.Choice(["qc", "qd"]), default="qc", show_default=True)
@click.option("--split", type=click.Choice(["dev", "test"]), default="test", show_default=True)
@click.option("--pools", "pools_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Explicit pool file (defaults to the prepared split pools).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def eval_command(checkpoint, data_dir, task, split, pools_path, out_dir):
    """Rank pooled candidates with a trained model; writes report CSV and figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = corpus.load_prepared(Path(data_dir))
    try:
        model, payload = load_checkpoint(checkpoint, vocab=data.vocab)
    except VocabMismatchError as exc:
        raise click.ClickException(str(exc))
    if model.kind != task:
        raise click.ClickException(f"checkpoint holds a {model.kind!r} model but --task is {task!r}")
    cfg = payload.get("config") or {}
    max_q = int(cfg.get("max_question_len", 30))
    max_c = int(cfg.get("max_code_len", 200))
    if task == "qc":
        pairs = data.qc_dev if split == "dev" else data.qc_test
        pools = data.qc_dev_pools if split == "dev" else data.qc_test_pools
        scorer = evaluation.QCPoolScorer(model, corpus.index_qc(pairs, data.vocab, max_q, max_c))
    else:
        pairs = data.qd_dev if split == "dev" else data.qd_test
        pools = data.qd_dev_pools if split == "dev" else data.qd_test_pools
        scorer = evaluation.QDPoolScorer(model, corpus.index_qd(pairs, data.vocab, max_q))
    if pools_path:
        pools = corpus.load_pools(pools_path)
    if not pools:
        raise click.ClickException(f"no {task} {split} pools in {data_dir}")
    try:
        report = evaluation.evaluate(scorer, pools)
    except RuntimeError as exc:
        raise click.ClickException(str(exc))
    report_path = out / "report.csv"
    evaluation.write_report(report, report_path, plot=True)
    _write_manifest(
        out, "eval", {"task": task, "split": split}, None,
        [Path(checkpoint)], [report_path, out / "report.png"],
        extra={"map": report.map, "ndcg": report.ndcg},
    )
    click.echo(f"MAP {report.map:.4f}  nDCG {report.ndcg:.4f}")


if __name__ == "__main__":
    main()
