"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from . import ntm as ntm_mod
from .config import ConfigError, RunConfig
from .corpus import DataError, LabeledDataset, Vocab, balanced_subsample, build_vocab, dataset_stats, load_tsv
from .encoder import cls_attention
from .model import make_batch
from .nn import no_grad
from .nn.checkpoint import CheckpointError
from .runner import VOCAB, load_trainer, split_manifest, train_run
from .synth import SPLIT_NAMES, SynthConfig, clue_gap, concentration_entropy, gen_corpus, topic_concentration, write_corpus

EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 2, 3, 4


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_config(cls, path, overrides):
    values = config_mod.read_file(path) if path else {}
    if cls is RunConfig:
        values, _ = split_manifest(values)
    values.update(config_mod.env_overrides(cls))
    values.update(overrides)
    return config_mod.build(cls, values)


def _read_split(data, name: str, required: bool = True) -> LabeledDataset | None:
    path = data if os.path.isfile(data) else os.path.join(data, f"{name}.tsv")
    if not os.path.exists(path):
        if required:
            raise DataError(f"missing data file {path}")
        return None
    return load_tsv(path)


def cmd_gen_synth(args) -> int:
    cfg = _load_config(SynthConfig, args.config, _overrides(args.set))
    corpus = gen_corpus(cfg)
    try:
        write_corpus(corpus, args.out)
    except OSError as exc:
        raise DataError(f"cannot write to {args.out}: {exc}") from exc
    for name in SPLIT_NAMES:
        print(f"[{name}]")
        print(dataset_stats(corpus[name]).format_table())
    return 0


def cmd_build_vocab(args) -> int:
    train = _read_split(args.data, "train")
    vocab = build_vocab(train.documents, args.min_count, args.max_size or None)
    out = args.out or os.path.join(args.data if os.path.isdir(args.data) else ".", VOCAB)
    vocab.save(out)
    print(f"vocab size {vocab.size} -> {out} (sha256 {vocab.sha256()[:12]})")
    return 0


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = _load_config(RunConfig, args.config, overrides)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    train = _read_split(args.data, "train")
    val = _read_split(args.data, "val", required=False) if os.path.isdir(args.data) else None
    vocab = None
    vpath = args.vocab or (os.path.join(args.data, VOCAB) if os.path.isdir(args.data) else None)
    if vpath and os.path.exists(vpath):
        vocab = Vocab.load(vpath)
    trainer, history = train_run(cfg, train, val, vocab=vocab, out_dir=args.out, resume=args.resume)
    for s in history:
        print(s.csv_row())
    print(f"trained {trainer.epoch} epochs, {trainer.step} steps -> {args.out}")
    return 0


def _eval_split(trainer, ds: LabeledDataset, balanced: int | None, seed: int) -> dict[str, float]:
    if balanced:
        ds = balanced_subsample(ds, balanced, seed)
    if len(ds) == 0:
        raise DataError("evaluation split is empty")
    return trainer.evaluate(ds)


def cmd_eval(args) -> int:
    vocab = Vocab.load(args.vocab) if args.vocab else None
    trainer = load_trainer(args.run, args.checkpoint, vocab)
    if args.threshold is not None:
        trainer.model.cfg = trainer.model.cfg.replace(threshold=args.threshold)
    ds = load_tsv(args.data)
    m = _eval_split(trainer, ds, args.balanced, args.seed)
    print(f"{'split':<20}{'acc':>10}{'mcc':>10}{'f1':>10}")
    print(f"{os.path.basename(args.data):<20}{m['acc']:>10.4f}{m.get('mcc', float('nan')):>10.4f}"
          f"{m.get('f1', float('nan')):>10.4f}")
    print(",".join(repr(float(m.get(k, float("nan")))) for k in ("acc", "mcc", "f1")))
    return 0


def _theta(trainer, docs) -> np.ndarray:
    b = make_batch(list(docs), trainer.vocab, trainer.model.label_set, trainer.stopwords, trainer.model.dtype)
    return trainer.model.theta(b.bows)


def cmd_topics(args) -> int:
    trainer = load_trainer(args.run, args.checkpoint)
    if trainer.model.ntm is None:
        raise CheckpointError("this run was trained without the topic model")
    words = trainer.vocab.id_to_token
    for k, ids in enumerate(ntm_mod.top_words(trainer.model.ntm.phi, min(args.k, trainer.vocab.size))):
        print(f"topic_{k}\t" + " ".join(words[i] for i in ids))
    if args.theta_out:
        if not args.data:
            raise ConfigError("--theta-out needs --data")
        ds = load_tsv(args.data)
        theta = _theta(trainer, ds.documents) if len(ds) else np.zeros((0, trainer.model.cfg.n_topics))
        with open(args.theta_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["doc_id", *(f"theta_{k + 1}" for k in range(theta.shape[1]))]) + "\n")
            for d, row in zip(ds.documents, theta):
                fh.write(",".join([d.id, *(repr(float(v)) for v in row)]) + "\n")
    return 0


def cmd_diag(args) -> int:
    trainer = load_trainer(args.run, args.checkpoint)
    if args.kind == "topic-dist":
        if trainer.model.ntm is None:
            raise CheckpointError("this run was trained without the topic model")
        ds = _read_split(args.data, "test_iid")
        shares = topic_concentration(lambda docs: _theta(trainer, docs), ds.documents)
        for k, s in enumerate(shares):
            print(f"topic_{k}\t{float(s)!r}")
        print(f"entropy\t{float(concentration_entropy(shares))!r}")
    elif args.kind == "attn":
        ds = _read_split(args.data, "test_iid")
        if not args.doc:
            raise ConfigError("--doc is required for attn diagnostics")
        try:
            doc = ds.by_id(args.doc)
        except KeyError:
            raise DataError(f"unknown doc id {args.doc!r}") from None
        vocab = trainer.vocab
        with no_grad():
            hs = trainer.model.encoder.encode_sequence([vocab.encode_ids(doc.tokens)])
        weights = cls_attention(hs, 0)
        tokens = doc.tokens[:len(weights)]
        for t, w in zip(tokens, weights):
            print(f"{t}\t{float(w)!r}")
        if args.out:
            with open(args.out + ".csv", "w", encoding="utf-8", newline="\n") as fh:
                fh.write("token,weight\n")
                for t, w in zip(tokens, weights):
                    fh.write(f"{t},{float(w)!r}\n")
            peak = weights.max() if len(weights) else 1.0
            levels = [int(round(255 * w / peak)) if peak > 0 else 0 for w in weights]
            with open(args.out + ".pgm", "w", encoding="ascii", newline="\n") as fh:
                fh.write(f"P2\n{len(levels)} 1\n255\n{' '.join(map(str, levels))}\n")
    elif args.kind == "clue-gap":
        iid = _read_split(args.data, "test_iid")
        flipped = _read_split(args.data, "test_flipped")
        r = clue_gap(trainer.predict_proba, iid, flipped, trainer.model.cfg.threshold)
        print("acc_iid,acc_flipped,gap")
        print(",".join(repr(float(r[k])) for k in ("acc_iid", "acc_flipped", "gap")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decfd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate the synthetic biased corpus")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.set_defaults(func=cmd_gen_synth)

    v = sub.add_parser("build-vocab", help="build a vocabulary from train.tsv")
    v.add_argument("--data", required=True, help="data directory or a train TSV")
    v.add_argument("--out")
    v.add_argument("--min-count", type=int, default=1)
    v.add_argument("--max-size", type=int, default=0)
    v.set_defaults(func=cmd_build_vocab)

    t = sub.add_parser("train", help="train a model into a run directory")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--vocab")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy / MCC / F1 on a TSV split")
    e.add_argument("--run", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--vocab")
    e.add_argument("--data", required=True)
    e.add_argument("--balanced", type=int, metavar="N", help="balanced subsample with N docs per class")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threshold", type=float, help="override the decision threshold")
    e.set_defaults(func=cmd_eval)

    tp = sub.add_parser("topics", help="top words per topic")
    tp.add_argument("--run", required=True)
    tp.add_argument("--checkpoint")
    tp.add_argument("--k", type=int, default=10)
    tp.add_argument("--data")
    tp.add_argument("--theta-out")
    tp.set_defaults(func=cmd_topics)

    d = sub.add_parser("diag", help="topic-dist, attn or clue-gap diagnostics")
    d.add_argument("--run", required=True)
    d.add_argument("--checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--kind", required=True, choices=["topic-dist", "attn", "clue-gap"])
    d.add_argument("--doc")
    d.add_argument("--out", help="path prefix for attn .csv/.pgm output")
    d.set_defaults(func=cmd_diag)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
