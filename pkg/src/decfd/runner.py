"""Run directories: manifest, vocabulary, epoch log and checkpoints.

A run directory holds::

    manifest.txt        every RunConfig key plus ``meta.*`` provenance lines
    vocab.tsv           token<TAB>count in id order
    epochs.csv          one row per epoch
    ckpt_epoch000.dcfd  initial weights, then one file per epoch
    model.dcfd          latest weights
"""
from __future__ import annotations

import glob
import hashlib
import logging
import os
from typing import Callable

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build, parse_text
from .corpus import DataError, LabeledDataset, Vocab, build_vocab
from .model import EPOCH_CSV_HEADER, CausalTopicNet, EpochStats, Trainer
from .nn import checkpoint
from .nn.checkpoint import CheckpointError

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
VOCAB = "vocab.tsv"
EPOCH_CSV = "epochs.csv"
FINAL = "model.dcfd"


def vocab_digest(vocab: Vocab) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(vocab.sha256()), dtype=np.uint8).astype(np.float64)


def manifest_text(cfg: RunConfig, vocab: Vocab, label_set) -> str:
    meta = {
        "meta.version": __version__,
        "meta.vocab_size": vocab.size,
        "meta.vocab_sha256": vocab.sha256(),
        "meta.label_set": ",".join(str(l) for l in label_set),
    }
    return cfg.to_manifest() + "".join(f"{k} = {v}\n" for k, v in meta.items())


def split_manifest(values: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    """Separate RunConfig keys from ``meta.*`` provenance keys."""
    cfg = {k: v for k, v in values.items() if not k.startswith("meta.")}
    meta = {k: v for k, v in values.items() if k.startswith("meta.")}
    return cfg, meta


def read_manifest(run_dir: str | os.PathLike) -> tuple[RunConfig, dict[str, str]]:
    path = os.path.join(run_dir, MANIFEST)
    try:
        with open(path, encoding="utf-8") as fh:
            values = parse_text(fh.read(), path)
    except OSError as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from exc
    cfg_values, meta = split_manifest(values)
    return build(RunConfig, cfg_values), meta


def ckpt_path(run_dir, epoch: int) -> str:
    return os.path.join(run_dir, f"ckpt_epoch{epoch:03d}.dcfd")


def save_trainer(trainer: Trainer, path) -> None:
    state = trainer.state_dict()
    state["meta.vocab_sha256"] = vocab_digest(trainer.vocab)
    checkpoint.save(path, state)


def load_trainer(run_dir, ckpt: str | os.PathLike | None = None, vocab: Vocab | None = None) -> Trainer:
    cfg, meta = read_manifest(run_dir)
    if vocab is None:
        try:
            vocab = Vocab.load(os.path.join(run_dir, VOCAB))
        except OSError as exc:
            raise CheckpointError(f"cannot read vocabulary: {exc}") from exc
    label_set = tuple(int(x) for x in meta.get("meta.label_set", "0,1").split(","))
    expected = meta.get("meta.vocab_sha256")
    if expected is not None and expected != vocab.sha256():
        raise CheckpointError("vocabulary hash does not match the run manifest")
    state = checkpoint.load(ckpt or os.path.join(run_dir, FINAL))
    digest = state.pop("meta.vocab_sha256", None)
    if digest is not None and not np.array_equal(digest, vocab_digest(vocab)):
        raise CheckpointError("vocabulary hash does not match the checkpoint")
    trainer = Trainer(CausalTopicNet(cfg, vocab.size, label_set), vocab)
    trainer.load_state_dict(state)
    return trainer


def _check_resume(run_dir, cfg: RunConfig, vocab: Vocab) -> None:
    old, meta = read_manifest(run_dir)
    # epochs may be extended on resume; everything else must match
    if old.replace(epochs=cfg.epochs) != cfg:
        diff = [k for k in cfg.__dataclass_fields__ if getattr(old, k) != getattr(cfg, k) and k != "epochs"]
        raise ConfigError(f"resume config differs from manifest in: {', '.join(diff)}")
    if meta.get("meta.vocab_sha256") != vocab.sha256():
        raise ConfigError("resume vocabulary differs from the manifest")


def train_run(
    cfg: RunConfig,
    train: LabeledDataset,
    val: LabeledDataset | None = None,
    vocab: Vocab | None = None,
    out_dir: str | os.PathLike | None = None,
    resume: bool = False,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[Trainer, list[EpochStats]]:
    """Build (or resume) a model and train it for ``cfg.epochs`` epochs."""
    if len(train) == 0:
        raise DataError("training split is empty")
    if vocab is None:
        vocab = build_vocab(train.documents, cfg.min_count, cfg.max_vocab or None)
    label_set = train.label_set
    trainer = Trainer(CausalTopicNet(cfg, vocab.size, label_set), vocab)
    history: list[EpochStats] = []

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        have = os.path.exists(os.path.join(out_dir, MANIFEST))
        if resume and have:
            _check_resume(out_dir, cfg, vocab)
            ckpts = sorted(glob.glob(os.path.join(out_dir, "ckpt_epoch*.dcfd")))
            if not ckpts:
                raise CheckpointError(f"no checkpoints to resume from in {out_dir}")
            trainer = load_trainer(out_dir, ckpts[-1], vocab)
            if trainer.model.cfg != cfg.replace(epochs=trainer.model.cfg.epochs):
                raise ConfigError("checkpoint config mismatch")
            trainer.model.cfg = cfg
            with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(manifest_text(cfg, vocab, label_set))
        else:
            with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(manifest_text(cfg, vocab, label_set))
            vocab.save(os.path.join(out_dir, VOCAB))
            with open(os.path.join(out_dir, EPOCH_CSV), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(EPOCH_CSV_HEADER + "\n")
            save_trainer(trainer, ckpt_path(out_dir, 0))
            save_trainer(trainer, os.path.join(out_dir, FINAL))

    while trainer.epoch < cfg.epochs:
        stats = trainer.train_epoch(train, val)
        history.append(stats)
        log.info("epoch %d L_cfd=%.4f L_ntm=%.4f gamma=%.4f val=%s (%.1fs)",
                 stats.epoch, stats.l_cfd, stats.l_ntm, stats.gamma, stats.val, stats.seconds)
        if out_dir is not None:
            with open(os.path.join(out_dir, EPOCH_CSV), "a", encoding="utf-8", newline="\n") as fh:
                fh.write(stats.csv_row() + "\n")
            save_trainer(trainer, ckpt_path(out_dir, trainer.epoch))
            save_trainer(trainer, os.path.join(out_dir, FINAL))
        if on_epoch is not None:
            on_epoch(stats)
    return trainer, history


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
