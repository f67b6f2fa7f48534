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

import csv
import json
import logging
import os
import platform
from collections import OrderedDict
from datetime import datetime
from typing import Callable, Dict, List, Optional, Tuple

import attr
import numpy as np
import pytz
from dateutil.parser import isoparse

import pyuserid
from pyuserid.api import dispatch
from pyuserid.config import AblationSpec, ExperimentConfig
from pyuserid.data import SplitDataset, few_shot_users, split_per_user, synthesize
from pyuserid.federated import RoundReport, run as run_federated
from pyuserid.identifiers import IdentifierAssignment, Scheme
from pyuserid.methods import ConventionalMethod, Method, UntiedEmbeddingMethod, UserAdapterMethod, \
    UserIdentifierMethod
from pyuserid.model import ModelConfig, Parameters
from pyuserid.tokenizer import Vocabulary

RESULT_COLUMNS = ["method", "id_type", "id_len", "seed", "split", "accuracy", "status"]
SPLIT_RATIOS = (0.8, 0.1, 0.1)

CONVENTIONAL = "Conventional"
USER_ADAPTER = "UserAdapter"
UNTIED = "UntiedUserEmb"
USER_IDENTIFIER = "UserIdentifier"


@attr.s(frozen=True)
class ResultRow:
    method = attr.ib()
    id_type = attr.ib()
    id_len = attr.ib()
    seed = attr.ib()
    split = attr.ib()
    accuracy = attr.ib()
    status = attr.ib(default="ok")

    @property
    def key(self) -> tuple:
        return self.method, self.id_type, self.id_len, self.seed, self.split

    def to_csv(self) -> list:
        return [self.method, self.id_type, self.id_len, self.seed, self.split,
                '' if self.accuracy is None else repr(self.accuracy), self.status]

    @staticmethod
    def from_csv(record: Dict[str, str]) -> 'ResultRow':
        return ResultRow(method=record["method"],
                         id_type=record["id_type"],
                         id_len=int(record["id_len"]),
                         seed=int(record["seed"]),
                         split=record["split"],
                         accuracy=float(record["accuracy"]) if record["accuracy"] else None,
                         status=record["status"])


class ResultWriter:
    """Single writer for a result CSV; rows already present count as completed."""

    logger = logging.getLogger()

    def __init__(self, path: str):
        assert(isinstance(path, str))

        self.path = path
        self.rows = self.read(path) if os.path.exists(path) else []
        self.completed = {row.key for row in self.rows}

        if self.rows:
            self.logger.info(f"Resuming {path}: {len(self.rows)} rows already completed")
        else:
            with open(path, 'w', newline='') as file:
                csv.writer(file, lineterminator='\n').writerow(RESULT_COLUMNS)

    @staticmethod
    def read(path: str) -> List[ResultRow]:
        with open(path, 'r', newline='') as file:
            return [ResultRow.from_csv(record) for record in csv.DictReader(file)]

    def is_done(self, key: tuple) -> bool:
        return key in self.completed

    def append(self, rows: List[ResultRow]):
        with open(self.path, 'a', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            for row in rows:
                if row.key in self.completed:
                    raise ValueError(f"Duplicate result key {row.key}")
                writer.writerow(row.to_csv())
                self.completed.add(row.key)
                self.rows.append(row)


class Cell:
    def __init__(self, keys: List[tuple], work: Callable[[], List[ResultRow]]):
        self.keys = keys
        self.work = work


def _run_cells(cells: List[Cell], writer: ResultWriter, workers: int):
    """Runs pending cells `workers` at a time, writing their rows in grid order as each batch completes."""
    pending = [cell for cell in cells if not all(writer.is_done(key) for key in cell.keys)]
    logging.getLogger().info(f"{len(pending)} of {len(cells)} grid cells to run")

    for start in range(0, len(pending), workers):
        batch = pending[start:start + workers]
        for rows in dispatch([cell.work for cell in batch], workers):
            writer.append(rows)


def experiment_data(config: ExperimentConfig, seed: int) -> Tuple[Vocabulary, SplitDataset]:
    vocab, samples, _ = synthesize(config.data, seed)
    return vocab, split_per_user(samples, SPLIT_RATIOS, seed)


def model_config_for(config: ExperimentConfig, vocab: Vocabulary) -> ModelConfig:
    return attr.evolve(config.model, vocab_size=vocab.size, n_classes=config.data.n_classes)


def build_method(name: str, config: ExperimentConfig, vocab: Vocabulary, scheme: Optional[Scheme] = None,
                 length: Optional[int] = None) -> Method:
    model_config = model_config_for(config, vocab)
    length = config.ablation.compare_length if length is None else length

    if name == CONVENTIONAL:
        return ConventionalMethod(model_config, config.train)
    elif name == USER_ADAPTER:
        return UserAdapterMethod(model_config, config.train, config.adapter, config.ablation.prefix_length)
    elif name == UNTIED:
        return UntiedEmbeddingMethod(model_config, config.train, vocab, scheme or Scheme.RAND_ALL, length,
                                     config.seed)
    elif name == USER_IDENTIFIER:
        return UserIdentifierMethod(model_config, config.train, vocab, scheme or Scheme.RAND_ALL, length,
                                    config.seed)
    else:
        raise ValueError(f"Unknown method '{name}'")


def _test_rows(method: Method, dataset: SplitDataset, seed: int, id_len: int) -> List[ResultRow]:
    result = method.evaluate(dataset.test)
    rows = [ResultRow(method.name, method.id_type, id_len, seed, "test", result.accuracy)]
    if result.ambiguous_accuracy is not None:
        rows.append(ResultRow(method.name, method.id_type, id_len, seed, "test_ambiguous",
                              result.ambiguous_accuracy))

    few_shot = few_shot_users(dataset.train + dataset.val + dataset.test)
    if few_shot:
        rows.append(ResultRow(method.name, method.id_type, id_len, seed, "test_few_shot",
                              method.evaluate(dataset.test, users=few_shot).accuracy))
    return rows


def _identifier_length(method: UserIdentifierMethod, users: List[str]) -> int:
    if method.scheme.is_random:
        return method.length
    assignment = method.make_assignment(users)
    return max(len(assignment[user]) for user in assignment.users)


def run_ablation(config: ExperimentConfig, path: str) -> List[ResultRow]:
    """Identifier type x length grid, `repetitions` seeds per cell, resumable through the CSV at `path`.

    Num and Default identifiers have no free length and run once per seed at their natural length.
    """
    assert(isinstance(config, ExperimentConfig))

    spec = config.ablation
    if len(spec.lengths) == 0:
        raise ValueError("Ablation grid needs at least one identifier length")
    if len(spec.types) == 0:
        raise ValueError("Ablation grid needs at least one identifier type")
    if spec.repetitions < 1:
        raise ValueError(f"Ablation needs at least one repetition, got {spec.repetitions}")

    logger = logging.getLogger()
    writer = ResultWriter(path)
    copies = spec.placement.copies
    lengths = list(OrderedDict.fromkeys(spec.lengths))

    cells = []
    for repetition in range(spec.repetitions):
        seed = config.seed + repetition
        run_config = config.for_seed(seed)
        run_config = attr.evolve(run_config, train=attr.evolve(run_config.train, placement=spec.placement))
        vocab, dataset = experiment_data(run_config, seed)

        for scheme in spec.types:
            for length in (lengths if scheme.is_random else lengths[:1]):
                method = build_method(USER_IDENTIFIER, run_config, vocab, scheme, length)
                id_len = _identifier_length(method, dataset.users)
                key = (USER_IDENTIFIER, scheme.value, id_len, seed, "test")

                if 1 + copies * id_len > run_config.model.max_seq_len:
                    logger.warning(f"{scheme.value} identifiers of length {id_len} do not fit "
                                   f"max_seq_len {run_config.model.max_seq_len}, recording as infeasible")
                    row = ResultRow(USER_IDENTIFIER, scheme.value, id_len, seed, "test", None, "infeasible")
                    cells.append(Cell([key], lambda row=row: [row]))
                    continue

                def work(method=method, dataset=dataset, seed=seed, id_len=id_len):
                    method.fit(dataset)
                    return _test_rows(method, dataset, seed, id_len)[:1]

                cells.append(Cell([key], work))

    _run_cells(cells, writer, spec.workers)
    return writer.rows


def compare_methods(spec: AblationSpec) -> List[Tuple[str, Optional[Scheme]]]:
    """Compared methods in report order, without duplicates."""
    methods = [(CONVENTIONAL, None), (USER_ADAPTER, None), (UNTIED, Scheme.RAND_ALL)]
    methods += [(USER_IDENTIFIER, scheme) for scheme in spec.types]
    return list(OrderedDict.fromkeys(methods))


def compare_baselines(config: ExperimentConfig, path: str) -> List[ResultRow]:
    """Every method on the same data and seed; rows for overall, ambiguous and few-shot test accuracy."""
    assert(isinstance(config, ExperimentConfig))

    spec = config.ablation
    writer = ResultWriter(path)

    cells = []
    for repetition in range(spec.repetitions):
        seed = config.seed + repetition
        run_config = config.for_seed(seed)
        vocab, dataset = experiment_data(run_config, seed)

        for name, scheme in compare_methods(spec):
            method = build_method(name, run_config, vocab, scheme)
            id_len = _identifier_length(method, dataset.users) if isinstance(method, UserIdentifierMethod) \
                else method.id_len
            key = (method.name, method.id_type, id_len, seed, "test")

            def work(method=method, dataset=dataset, seed=seed, id_len=id_len):
                method.fit(dataset)
                return _test_rows(method, dataset, seed, id_len)

            cells.append(Cell([key], work))

    _run_cells(cells, writer, spec.workers)
    return writer.rows


def length_note(lengths: List[int], max_seq_len: int) -> str:
    shares = ", ".join(f"{length} ({100 * length / max_seq_len:.1f}%)" for length in sorted(set(lengths)))
    return f"Identifier lengths as a share of max_seq_len {max_seq_len}: {shares}"


def summarize(rows: List[ResultRow], max_seq_len: Optional[int] = None) -> str:
    """Mean accuracy over seeds per (method, id_type, id_len, split), as a text table.

    With `max_seq_len` the table is headed by the identifier lengths as a share of the sequence.
    """
    groups = OrderedDict()
    for row in rows:
        if row.accuracy is not None:
            groups.setdefault((row.method, row.id_type, row.id_len, row.split), []).append(row.accuracy)

    lines = [f"{'method':<16}{'id_type':<10}{'id_len':>7}  {'split':<16}{'mean':>8}{'std':>8}{'seeds':>7}"]
    lengths = [row.id_len for row in rows if row.method == USER_IDENTIFIER and row.id_len > 0]
    if max_seq_len is not None and lengths:
        lines.insert(0, length_note(lengths, max_seq_len))
    for (method, id_type, id_len, split), values in groups.items():
        lines.append(f"{method:<16}{id_type:<10}{id_len:>7}  {split:<16}"
                     f"{np.mean(values):>8.4f}{np.std(values):>8.4f}{len(values):>7}")
    if any(row.id_type == Scheme.DEFAULT.value for row in rows):
        lines.append("Default identifiers are synthesized from user id strings.")
    return '\n'.join(lines) + '\n'


def run_federated_experiment(config: ExperimentConfig, dataset: SplitDataset, vocab: Vocabulary,
                             scheme: Optional[Scheme], length: int) -> Tuple[Parameters, List[RoundReport],
                                                                             Optional[IdentifierAssignment]]:
    """Federated UserIdentifier run, or the federated conventional baseline when `scheme` is None."""
    model_config = attr.evolve(model_config_for(config, vocab), users=tuple(dataset.users))

    assignment = None
    if scheme is not None:
        method = build_method(USER_IDENTIFIER, config, vocab, scheme, length)
        assignment = method.make_assignment(dataset.users)

    params, reports = run_federated(dataset, assignment, model_config, config.federated)
    return params, reports, assignment


def versions() -> Dict[str, str]:
    return {"pyuserid": pyuserid.__version__,
            "python": platform.python_version(),
            "numpy": np.__version__}


def write_manifest(path: str, config: ExperimentConfig, command: List[str]):
    manifest = {"config_hash": config.config_hash(),
                "seed": config.seed,
                "command": command,
                "versions": versions(),
                "created": datetime.now(tz=pytz.utc).isoformat(),
                "config": config.to_dict()}

    with open(path, 'w') as file:
        json.dump(manifest, file, indent=2, sort_keys=True)


def read_manifest(path: str) -> dict:
    with open(path, 'r') as file:
        manifest = json.load(file)

    manifest["created"] = isoparse(manifest["created"])
    return manifest


def check_resume(manifest_path: str, config: ExperimentConfig):
    """Refuses to extend results produced under a different config."""
    if not os.path.exists(manifest_path):
        return

    previous = read_manifest(manifest_path)
    if previous["config_hash"] != config.config_hash():
        raise ValueError(f"{manifest_path} was written for config {previous['config_hash'][:12]}, "
                         f"not {config.config_hash()[:12]}; use another output directory")

    logging.getLogger().info(f"Resuming run started at {previous['created'].astimezone(pytz.utc).isoformat()}")
