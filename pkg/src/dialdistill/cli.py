"""Command-line pipeline: prepare data, train teachers and students, evaluate,
and poke at a checkpoint interactively.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic given its inputs, config, and seed."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .corpus import UNIVERSAL, CorpusError, load_corpus, load_database, load_ontology, save_corpus, tokenize
from .distill import DistillConfig
from .evaluation import evaluate_corpus, evaluate_gold_responses, write_report
from .model import ModelConfig, StudentModel, encode_utterance, generate_response, student_action
from .pipeline import load_dataset, prepare_dataset
from .synthetic import SynthesisConfig, generate_synthetic_corpus
from .train import select_best_teacher, train_student, train_teacher, TeacherSet

CONFIG_ENV_VAR = "DIALDISTILL_CONFIG"

# CLI mode -> distillation loss mode; "universal" routes through the
# all-domain teacher with plain full-vocabulary output distillation.
MODE_MAP = {
    "none": "none",
    "full": "output_full",
    "topk": "output_topk",
    "policy": "policy",
    "all": "all",
    "universal": "output_full",
}


def _load_experiment_config(args):
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    config = load_config(path) if path else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
        config.model.seed = args.seed
        config.train.seed = args.seed
    return config


def _model_config_for(config, vocab):
    # The configured vocab_size is a cap; the embedding uses the actual size.
    if len(vocab) > config.model.vocab_size:
        raise ValueError(f"vocabulary of {len(vocab)} exceeds configured cap {config.model.vocab_size}")
    model_config = ModelConfig.from_dict(config.model.to_dict())
    model_config.vocab_size = len(vocab)
    return model_config


def cmd_prepare(args, parser):
    config = _load_experiment_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.synthetic is not None:
        if args.corpus or args.ontology or args.database:
            parser.error("--synthetic replaces --corpus/--ontology/--database")
        if args.synthetic == "default":
            spec = SynthesisConfig()
        else:
            with open(args.synthetic, "r", encoding="utf-8") as fh:
                spec = SynthesisConfig.from_dict(json.load(fh))
        ontology, database, episodes = generate_synthetic_corpus(spec, config.seed)
        save_corpus(os.path.join(args.out, "corpus_raw.json"), episodes)
    else:
        missing = [name for name in ("corpus", "ontology", "database") if getattr(args, name) is None]
        if missing:
            parser.error(f"missing required path(s): {', '.join('--' + m for m in missing)}")
        ontology = load_ontology(args.ontology)
        database = load_database(args.database, ontology)
        episodes = load_corpus(args.corpus, ontology, database)
    manifest = prepare_dataset(
        args.out,
        episodes,
        ontology,
        database,
        vocab_max_size=config.model.vocab_size,
        split=config.split,
        seed=config.seed,
    )
    counts = manifest["counts"]["episodes"]
    print(
        f"prepared {sum(counts.values())} episodes "
        f"(train {counts['train']} / val {counts['val']} / test {counts['test']}), "
        f"vocab {manifest['vocab_size']} -> {args.out}"
    )
    return 0


def _teacher_data(dataset, domain):
    if domain == UNIVERSAL:
        return dataset.universal_split("train"), dataset.universal_split("val")
    return dataset.domain_splits[domain]["train"], dataset.domain_splits[domain]["val"]


def _train_one_teacher(data_dir, domain, config, out_dir):
    dataset = load_dataset(data_dir)
    train_eps, val_eps = _teacher_data(dataset, domain)
    model_config = _model_config_for(config, dataset.vocab)
    epochs_dir = os.path.join(out_dir, "epochs")
    os.makedirs(epochs_dir, exist_ok=True)
    _, checkpoints, log_rows = train_teacher(
        train_eps,
        dataset.ontology,
        dataset.vocab,
        domain,
        model_config,
        config.train,
        val_episodes=val_eps,
        out_dir=epochs_dir,
    )
    best, record = select_best_teacher(
        checkpoints, val_eps, dataset.ontology, dataset.database, dataset.vocab, model_config, domain
    )
    ckpt_path = os.path.join(out_dir, f"teacher_{domain}.ckpt")
    save_checkpoint(ckpt_path, best, "teacher", dataset.vocab, dataset.ontology, domain=domain)
    with open(os.path.join(out_dir, f"teacher_{domain}.selection.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, f"teacher_{domain}.log.jsonl"), "w", encoding="utf-8") as fh:
        for row in log_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return {
        "domain": domain,
        "checkpoint": ckpt_path,
        "selected_epoch": record["selected_epoch"],
        "epochs_run": len(checkpoints),
    }


def _train_teacher_job(data_dir, domain, config_dict, out_dir):
    torch.set_num_threads(1)
    return _train_one_teacher(data_dir, domain, ExperimentConfig.from_dict(config_dict), out_dir)


def cmd_train_teacher(args, parser):
    config = _load_experiment_config(args)
    dataset = load_dataset(args.data_dir)
    available = list(dataset.ontology.domains) + [UNIVERSAL]
    if args.domain == "all":
        domains = available
    elif args.domain in available:
        domains = [args.domain]
    else:
        parser.error(f"unknown domain {args.domain!r}; available: {', '.join(available + ['all'])}")
    out_dir = args.out or os.path.join(args.data_dir, "teachers")
    os.makedirs(out_dir, exist_ok=True)
    if args.jobs > 1 and len(domains) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_train_teacher_job, args.data_dir, d, config.to_dict(), out_dir) for d in domains
            ]
            results = [f.result() for f in futures]
    else:
        results = [_train_one_teacher(args.data_dir, d, config, out_dir) for d in domains]
    for result in results:
        print(
            f"teacher[{result['domain']}]: epoch {result['selected_epoch']} of "
            f"{result['epochs_run']} selected -> {result['checkpoint']}"
        )
    return 0


def _load_teachers(teachers_dir, mode, dataset):
    wanted = [UNIVERSAL] if mode == "universal" else list(dataset.ontology.domains)
    by_domain = {}
    for domain in wanted:
        path = os.path.join(teachers_dir, f"teacher_{domain}.ckpt")
        if not os.path.exists(path):
            continue
        ckpt = load_checkpoint(path)
        if ckpt.kind != "teacher":
            raise CheckpointError(f"{path}: expected a teacher checkpoint, found {ckpt.kind!r}")
        if ckpt.vocab.tokens != dataset.vocab.tokens:
            raise CheckpointError(f"{path}: teacher vocabulary does not match the dataset vocabulary")
        by_domain[domain] = ckpt.model
    if not by_domain:
        raise RuntimeError(f"no usable teacher checkpoints under {teachers_dir!r} for mode")
    missing = [d for d in wanted if d not in by_domain]
    if missing:
        print(f"warning: no teacher checkpoint for: {', '.join(missing)} (NLL-only fallback)", file=sys.stderr)
    return TeacherSet(by_domain=by_domain)


def cmd_train_student(args, parser):
    config = _load_experiment_config(args)
    dataset = load_dataset(args.data_dir)
    distill_mode = MODE_MAP[args.mode]
    k = args.k if args.k is not None else config.distill.k
    distill_config = DistillConfig(
        alpha1=config.distill.alpha1, alpha2=config.distill.alpha2, mode=distill_mode, k=k
    )
    teachers = None
    if distill_mode != "none":
        if args.teachers == "none":
            parser.error(f"--mode {args.mode} requires --teachers <dir>")
        teachers = _load_teachers(args.teachers, args.mode, dataset)
    model_config = _model_config_for(config, dataset.vocab)
    mode_tag = f"topk{k}" if args.mode == "topk" else args.mode
    out_dir = args.out or os.path.join(args.data_dir, "student")
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, f"student_{mode_tag}.log.jsonl")
    model, log_rows = train_student(
        dataset.splits["train"],
        dataset.ontology,
        dataset.database,
        dataset.vocab,
        teachers,
        model_config,
        distill_config,
        config.train,
        val_episodes=dataset.splits["val"],
        log_path=log_path,
    )
    ckpt_path = os.path.join(out_dir, f"student_{mode_tag}.ckpt")
    save_checkpoint(ckpt_path, model, "student", dataset.vocab, dataset.ontology)
    last = log_rows[-1]
    print(
        f"student[{mode_tag}]: {len(log_rows)} epochs, final nll {last['nll']:.4f}, "
        f"val inform {last['val_inform']:.1f} success {last['val_success']:.1f} -> {ckpt_path}"
    )
    return 0


def cmd_eval(args, parser):
    if not args.gold and args.checkpoint is None:
        parser.error("--checkpoint is required unless --gold is given")
    dataset = load_dataset(args.data_dir)
    episodes = dataset.splits[args.split]
    if args.gold:
        mode_tag = "gold"
        report = evaluate_gold_responses(episodes, dataset.database)
        metadata = {"split": args.split, "gold_responses": True}
    else:
        ckpt = load_checkpoint(args.checkpoint)
        mode_tag = os.path.splitext(os.path.basename(args.checkpoint))[0]
        report = evaluate_corpus(ckpt.model, episodes, dataset.database, ckpt.ontology, ckpt.vocab)
        metadata = {"split": args.split, "checkpoint": args.checkpoint, "kind": ckpt.kind}
    text_path = write_report(report, args.out, mode_tag, metadata)
    print(f"BLEU {report.bleu:.4f}  Inform {report.inform_rate:.1f}  Success {report.success_rate:.1f}")
    print(f"report -> {args.out} / {text_path}")
    return 0


def cmd_chat(args, parser):
    ckpt = load_checkpoint(args.checkpoint)
    if not isinstance(ckpt.model, StudentModel):
        raise RuntimeError("chat needs a student checkpoint; teachers require labeled states")
    model, vocab = ckpt.model, ckpt.vocab
    state = None
    with torch.no_grad():
        for line in sys.stdin:
            line = line.strip()
            if line == "/quit":
                return 0
            if line == "/reset":
                state = None
                continue
            if not line:
                continue
            try:
                enc = encode_utterance(model, vocab.encode(tokenize(line)))
                action, state = student_action(model, enc.v_u, state)
                tokens = vocab.decode(generate_response(model, action, enc.word_states))
                print(" ".join(tokens), flush=True)
            except (ValueError, RuntimeError) as exc:
                print(f"decode error: {exc}", file=sys.stderr, flush=True)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dialdistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="delexicalize, tag, split, and build the vocabulary")
    p.add_argument("--corpus", help="raw corpus JSON")
    p.add_argument("--ontology", help="ontology JSON")
    p.add_argument("--database", help="database JSON")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--synthetic", metavar="SPEC", help="'default' or a synthesis-config JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help=f"experiment config JSON (default: ${CONFIG_ENV_VAR})")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-teacher", help="pre-train per-domain (or universal) teachers")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--domain", required=True, help="domain name, 'universal', or 'all'")
    p.add_argument("--out", help="output directory (default: <data-dir>/teachers)")
    p.add_argument("--jobs", type=int, default=1, help="parallel teacher-training processes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help=f"experiment config JSON (default: ${CONFIG_ENV_VAR})")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train the universal student, optionally distilled")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--teachers", default="none", help="teacher checkpoint directory, or 'none'")
    p.add_argument("--mode", required=True, choices=sorted(MODE_MAP))
    p.add_argument("--k", type=int, default=None, help="top-k size for --mode topk")
    p.add_argument("--out", help="output directory (default: <data-dir>/student)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help=f"experiment config JSON (default: ${CONFIG_ENV_VAR})")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--gold", action="store_true", help="score the gold responses instead of a model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="interactive response REPL over a student checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_chat)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.set_num_threads(1)
    try:
        return args.func(args, parser)
    except (CorpusError, CheckpointError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
