# This file is part of pyuserid.
#
# Copyright (C) 2022 pyuserid developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Tuple

from pyuserid.config import ExperimentConfig
from pyuserid.data import SplitDataset, lexicon_corpus, load_jsonl, save_jsonl, save_profiles, split_per_user, \
    synthesize
from pyuserid.federated import write_rounds_csv
from pyuserid.harness import CONVENTIONAL, SPLIT_RATIOS, UNTIED, USER_ADAPTER, USER_IDENTIFIER, build_method, \
    check_resume, compare_baselines, experiment_data, run_ablation, run_federated_experiment, summarize, \
    write_manifest
from pyuserid.identifiers import Scheme, load_assignment, save_assignment
from pyuserid.model import load_checkpoint, save_checkpoint
from pyuserid.tokenizer import Vocabulary, build_vocab, load_vocab, save_vocab
from pyuserid.trainer import evaluate, write_metrics_csv, write_summary_json

OUT_DIR_ENV = "PYUSERID_OUT_DIR"
DEFAULT_OUT_DIR = "out"

METHODS = {
    "conventional": CONVENTIONAL,
    "identifier": USER_IDENTIFIER,
    "untied": UNTIED,
    "adapter": USER_ADAPTER,
}


class UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}", self.format_usage())


def _scheme(value: str) -> Scheme:
    try:
        return Scheme(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown identifier type '{value}', "
                                         f"choose from {[scheme.value for scheme in Scheme]}")


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment config file (JSON)")
    common.add_argument("--seed", type=int, help="Seed overriding the config seed")
    common.add_argument("--out-dir", help=f"Output directory (default ${OUT_DIR_ENV} or '{DEFAULT_OUT_DIR}')")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    parser = ArgumentParser(prog="pyuserid", description="User-identifier personalization experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    gen_data = commands.add_parser("gen-data", parents=[common], help="Generate a synthetic per-user dataset")
    gen_data.add_argument("--out", required=True, help="Output JSONL file")

    train = commands.add_parser("train", parents=[common], help="Train one method centrally")
    train.add_argument("--data", help="Dataset JSONL (synthesized from the config when omitted)")
    train.add_argument("--method", choices=sorted(METHODS), default="identifier")
    train.add_argument("--id-type", type=_scheme, default=Scheme.RAND_ALL)
    train.add_argument("--id-len", type=int, help="Identifier length (default ablation.compare_length)")

    fed_train = commands.add_parser("fed-train", parents=[common], help="Federated training with FedAvg")
    fed_train.add_argument("--data", help="Dataset JSONL (synthesized from the config when omitted)")
    fed_train.add_argument("--id-type", type=_scheme, default=Scheme.RAND_ALL)
    fed_train.add_argument("--id-len", type=int, help="Identifier length (default ablation.compare_length)")
    fed_train.add_argument("--conventional", action="store_true", help="Train without identifiers")

    commands.add_parser("ablate", parents=[common], help="Identifier type x length grid")
    commands.add_parser("compare", parents=[common], help="Compare UserIdentifier with the baselines")

    eval_parser = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--data", required=True)
    eval_parser.add_argument("--assignment", help="Identifier assignment JSONL")
    eval_parser.add_argument("--split", choices=["train", "val", "test"], default="test")

    return parser


def vocab_path(data_path: str) -> str:
    return os.path.splitext(data_path)[0] + ".vocab.json"


def users_path(data_path: str) -> str:
    return os.path.splitext(data_path)[0] + ".users.jsonl"


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return config.for_seed(args.seed if args.seed is not None else config.seed)


def out_dir(args) -> str:
    path = args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    os.makedirs(path, exist_ok=True)
    return path


def load_data(path: str, config: ExperimentConfig) -> Tuple[Vocabulary, SplitDataset]:
    if os.path.exists(vocab_path(path)):
        vocab = load_vocab(vocab_path(path))
    else:
        with open(path, 'r', encoding='utf-8') as file:
            texts = [json.loads(line).get("text", "") for line in file if line.strip()]
        vocab = build_vocab(list(lexicon_corpus(config.data.n_classes)) + texts,
                            max_size=config.data.vocab_size,
                            extra_symbol_budget=config.data.extra_symbol_budget)

    samples = load_jsonl(path, vocab)
    return vocab, split_per_user(samples, SPLIT_RATIOS, config.seed)


def _dataset(args, config: ExperimentConfig) -> Tuple[Vocabulary, SplitDataset]:
    if args.data:
        return load_data(args.data, config)
    return experiment_data(config, config.seed)


def gen_data(args, config: ExperimentConfig, argv: List[str]):
    vocab, samples, profiles = synthesize(config.data, config.seed)

    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)

    save_jsonl(args.out, samples, vocab)
    save_vocab(vocab_path(args.out), vocab)
    save_profiles(users_path(args.out), profiles)
    write_manifest(os.path.splitext(args.out)[0] + ".manifest.json", config, argv)

    logging.info(f"Wrote {len(samples)} samples of {len(profiles)} users to {args.out}")


def train(args, config: ExperimentConfig, argv: List[str]):
    vocab, dataset = _dataset(args, config)
    directory = out_dir(args)

    method = build_method(METHODS[args.method], config, vocab, args.id_type, args.id_len)
    metrics = method.fit(dataset)
    result = method.evaluate(dataset.test)

    write_metrics_csv(os.path.join(directory, "metrics.csv"), metrics)
    write_summary_json(os.path.join(directory, "summary.json"), metrics,
                       {"method": method.name, "id_type": method.id_type, "id_len": method.id_len,
                        "test_accuracy": result.accuracy, "test_ambiguous_accuracy": result.ambiguous_accuracy})
    save_checkpoint(os.path.join(directory, "model.ckpt"), method.parameters())
    if method.assignment is not None:
        save_assignment(os.path.join(directory, "assignment.jsonl"), method.assignment)
    write_manifest(os.path.join(directory, "manifest.json"), config, argv)

    logging.info(f"{method.name}: test accuracy {result.accuracy:.4f}, outputs in {directory}")


def fed_train(args, config: ExperimentConfig, argv: List[str]):
    vocab, dataset = _dataset(args, config)
    directory = out_dir(args)

    length = config.ablation.compare_length if args.id_len is None else args.id_len
    params, reports, assignment = run_federated_experiment(config, dataset, vocab,
                                                           None if args.conventional else args.id_type, length)

    write_rounds_csv(os.path.join(directory, "rounds.csv"), reports)
    save_checkpoint(os.path.join(directory, "model.ckpt"), params)
    if assignment is not None:
        save_assignment(os.path.join(directory, "assignment.jsonl"), assignment)
    write_manifest(os.path.join(directory, "manifest.json"), config, argv)


def ablate(args, config: ExperimentConfig, argv: List[str]):
    directory = out_dir(args)
    manifest = os.path.join(directory, "manifest.json")
    check_resume(manifest, config)
    write_manifest(manifest, config, argv)

    rows = run_ablation(config, os.path.join(directory, "ablation.csv"))
    with open(os.path.join(directory, "ablation_summary.txt"), 'w') as file:
        file.write(summarize(rows, config.model.max_seq_len))


def compare(args, config: ExperimentConfig, argv: List[str]):
    directory = out_dir(args)
    manifest = os.path.join(directory, "manifest.json")
    check_resume(manifest, config)
    write_manifest(manifest, config, argv)

    summary = summarize(compare_baselines(config, os.path.join(directory, "compare.csv")))
    with open(os.path.join(directory, "compare_summary.txt"), 'w') as file:
        file.write(summary)
    print(summary, end='')


def eval_checkpoint(args, config: ExperimentConfig, argv: List[str]):
    params = load_checkpoint(args.checkpoint)
    _, dataset = load_data(args.data, config)
    assignment = load_assignment(args.assignment) if args.assignment else None

    result = evaluate(params, dataset.split(args.split), assignment, config.train.placement)
    directory = out_dir(args)
    with open(os.path.join(directory, "eval.json"), 'w') as file:
        json.dump({"checkpoint": args.checkpoint, "split": args.split, "accuracy": result.accuracy,
                   "ambiguous_accuracy": result.ambiguous_accuracy, "per_user": result.per_user},
                  file, indent=2, sort_keys=True)
    write_manifest(os.path.join(directory, "eval_manifest.json"), config, argv)

    print(f"{args.split} accuracy: {result.accuracy:.4f}")


COMMANDS = {
    "gen-data": gen_data,
    "train": train,
    "fed-train": fed_train,
    "ablate": ablate,
    "compare": compare,
    "eval": eval_checkpoint,
}


def cli(argv: Optional[List[str]] = None) -> int:
    """Exit code 0 on success, 1 on a usage error, 2 on a runtime error."""
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(e.usage)
        sys.stderr.write(f"{e}\n")
        return 1
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1

    logging.basicConfig(format='%(asctime)-15s %(levelname)-8s %(message)s',
                        level=(logging.DEBUG if args.verbose else logging.INFO))

    try:
        config = load_config(args)
        COMMANDS[args.command](args, config, ["pyuserid"] + argv)
    except Exception as e:
        logging.error(f"{args.command} failed: {e}")
        return 2

    return 0
