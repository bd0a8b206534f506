"""Scaled end-to-end experiment on a synthetic two-domain corpus.

Pipeline: synthesize -> prepare -> pre-train one teacher per domain (epoch
checkpoints, validation-based selection) -> for each student seed train a
no-teacher baseline and a fully distilled student -> evaluate everything on
the held-out test split. Returns a summary comparing distilled Success
against the baseline per seed."""

from __future__ import annotations

import json
import os

import torch

from .checkpoint import save_checkpoint
from .distill import DistillConfig
from .evaluation import evaluate_corpus, format_report_table
from .model import ModelConfig
from .pipeline import load_dataset, prepare_dataset
from .synthetic import SynthesisConfig, generate_synthetic_corpus
from .train import TeacherSet, TrainConfig, select_best_teacher, train_student, train_teacher


def run_experiment(
    out_dir,
    base_seed=7,
    student_seeds=(1, 2, 3, 4, 5),
    episodes_per_domain=80,
    two_domain_episodes=40,
    embed_dim=32,
    hidden_dim=64,
    teacher_epochs=200,
    teacher_patience=12,
    student_epochs=18,
    quiet=False,
):
    """Run the full comparison; writes summary.json and returns the summary."""
    torch.set_num_threads(1)
    os.makedirs(out_dir, exist_ok=True)

    def say(message):
        if not quiet:
            print(message, flush=True)

    synth = SynthesisConfig(
        episodes_per_domain=episodes_per_domain, two_domain_episodes=two_domain_episodes
    )
    ontology, database, episodes = generate_synthetic_corpus(synth, base_seed)
    data_dir = os.path.join(out_dir, "data")
    prepare_dataset(data_dir, episodes, ontology, database, vocab_max_size=400, seed=base_seed)
    dataset = load_dataset(data_dir)
    say(f"corpus: {len(episodes)} episodes, vocab {len(dataset.vocab)}")

    def model_config(seed):
        return ModelConfig(
            embed_dim=embed_dim,
            hidden_dim=hidden_dim,
            vocab_size=len(dataset.vocab),
            max_decode_len=24,
            seed=seed,
        )

    teachers = {}
    teacher_metrics = {}
    teachers_dir = os.path.join(out_dir, "teachers")
    os.makedirs(teachers_dir, exist_ok=True)
    for domain in dataset.ontology.domains:
        train_eps = dataset.domain_splits[domain]["train"]
        val_eps = dataset.domain_splits[domain]["val"]
        test_eps = dataset.domain_splits[domain]["test"]
        config = TrainConfig(epochs=teacher_epochs, patience=teacher_patience, seed=base_seed)
        _, checkpoints, _ = train_teacher(
            train_eps, dataset.ontology, dataset.vocab, domain, model_config(base_seed), config,
            val_episodes=val_eps,
        )
        best, record = select_best_teacher(
            checkpoints, val_eps, dataset.ontology, dataset.database, dataset.vocab,
            model_config(base_seed), domain,
        )
        save_checkpoint(
            os.path.join(teachers_dir, f"teacher_{domain}.ckpt"),
            best, "teacher", dataset.vocab, dataset.ontology, domain=domain,
        )
        report = evaluate_corpus(best, test_eps, dataset.database, dataset.ontology, dataset.vocab)
        teachers[domain] = best
        teacher_metrics[domain] = {
            "epochs_run": len(checkpoints),
            "selected_epoch": record["selected_epoch"],
            "test_bleu": report.bleu,
            "test_inform": report.inform_rate,
            "test_success": report.success_rate,
        }
        say(
            f"teacher[{domain}]: {len(checkpoints)} epochs, selected {record['selected_epoch']}, "
            f"test success {report.success_rate:.1f}"
        )

    runs = []
    test_eps = dataset.splits["test"]
    for seed in student_seeds:
        row = {"seed": seed}
        for label, distill in (
            ("baseline", DistillConfig(mode="none")),
            ("distilled", DistillConfig(mode="all")),
        ):
            teacher_set = TeacherSet(by_domain=dict(teachers)) if distill.mode != "none" else None
            config = TrainConfig(epochs=student_epochs, seed=seed)
            model, _ = train_student(
                dataset.splits["train"], dataset.ontology, dataset.database, dataset.vocab,
                teacher_set, model_config(seed), distill, config,
                val_episodes=(),
            )
            report = evaluate_corpus(model, test_eps, dataset.database, dataset.ontology, dataset.vocab)
            row[label] = {
                "bleu": report.bleu,
                "inform": report.inform_rate,
                "success": report.success_rate,
            }
            say(
                f"student[seed {seed} {label}]: test bleu {report.bleu:.4f} "
                f"inform {report.inform_rate:.1f} success {report.success_rate:.1f}"
            )
        row["distilled_wins"] = row["distilled"]["success"] >= row["baseline"]["success"]
        runs.append(row)

    summary = {
        "base_seed": base_seed,
        "student_seeds": list(student_seeds),
        "teachers": teacher_metrics,
        "runs": runs,
        "wins": sum(r["distilled_wins"] for r in runs),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    say(f"distilled >= baseline on {summary['wins']}/{len(runs)} seeds")
    return summary
