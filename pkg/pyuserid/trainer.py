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
from collections import OrderedDict
from pprint import pformat
from typing import Dict, Iterable, List, Optional, Set, Tuple

import attr
import numpy as np

from pyuserid.augment import AugmentedSample, Placement, Sample, augment, frame
from pyuserid.data import SplitDataset
from pyuserid.identifiers import IdentifierAssignment
from pyuserid.model import Mode, ModelConfig, Parameters, freeze_mask, loss_and_gradients, predict_logits
from pyuserid.util import derive_rng

Mask = Dict[str, Optional[int]]


def _in_unit_interval(instance, attribute, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{attribute.name} must lie in (0, 1), got {value}")


def _non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError(f"{attribute.name} must not be negative, got {value}")


def _positive(instance, attribute, value):
    if value <= 0:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


@attr.s(frozen=True)
class TrainConfig:
    epochs = attr.ib(default=20, validator=[attr.validators.instance_of(int), _non_negative])
    batch_size = attr.ib(default=16, validator=[attr.validators.instance_of(int), _positive])
    learning_rate = attr.ib(default=1e-3, converter=float, validator=_non_negative)
    optimizer = attr.ib(default="adam", validator=attr.validators.in_(["adam", "sgd"]))
    momentum = attr.ib(default=0.0, converter=float, validator=_non_negative)
    beta1 = attr.ib(default=0.9, converter=float, validator=_in_unit_interval)
    beta2 = attr.ib(default=0.999, converter=float, validator=_in_unit_interval)
    epsilon = attr.ib(default=1e-8, converter=float, validator=_positive)
    seed = attr.ib(default=0, validator=attr.validators.instance_of(int))
    eval_every = attr.ib(default=1, validator=[attr.validators.instance_of(int), _non_negative])
    placement = attr.ib(default=Placement.BOTH, converter=Placement)

    def to_dict(self) -> dict:
        result = attr.asdict(self, recurse=False)
        result["placement"] = self.placement.value
        return result


class Sgd:
    def __init__(self, learning_rate: float, momentum: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params: Parameters, grads: Dict[str, np.ndarray], mask: Mask):
        for name, row in mask.items():
            tensor, grad = (params[name], grads[name]) if row is None else (params[name][row], grads[name][row])

            if self.momentum > 0.0:
                velocity = self.velocity.setdefault((name, row), np.zeros_like(grad))
                velocity *= self.momentum
                velocity += grad
                grad = velocity

            tensor -= self.learning_rate * grad


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.moments = {}
        self.steps = 0

    def step(self, params: Parameters, grads: Dict[str, np.ndarray], mask: Mask):
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps

        for name, row in mask.items():
            tensor, grad = (params[name], grads[name]) if row is None else (params[name][row], grads[name][row])

            first, second = self.moments.setdefault((name, row), (np.zeros_like(grad), np.zeros_like(grad)))
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad

            tensor -= self.learning_rate * (first / correction1) / (np.sqrt(second / correction2) + self.epsilon)


def make_optimizer(config: TrainConfig):
    assert(isinstance(config, TrainConfig))

    if config.optimizer == "sgd":
        return Sgd(config.learning_rate, config.momentum)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)


class EvalResult:
    def __init__(self, accuracy: float, per_user: Dict[str, float], counts: Dict[str, int],
                 ambiguous_accuracy: Optional[float], total: int):
        self.accuracy = accuracy
        self.per_user = per_user
        self.counts = counts
        self.ambiguous_accuracy = ambiguous_accuracy
        self.total = total

    def __repr__(self):
        return pformat(vars(self))


class Metrics:
    """Metric history as (epoch, split, metric, value) rows, in the order they were recorded."""

    def __init__(self):
        self.rows = []

    def record(self, epoch: int, split: str, metric: str, value: float):
        self.rows.append((epoch, split, metric, float(value)))

    def record_eval(self, epoch: int, split: str, result: EvalResult):
        self.record(epoch, split, "accuracy", result.accuracy)
        if result.ambiguous_accuracy is not None:
            self.record(epoch, split, "ambiguous_accuracy", result.ambiguous_accuracy)

    def history(self, split: str, metric: str) -> List[float]:
        return [value for _, row_split, row_metric, value in self.rows if (row_split, row_metric) == (split, metric)]

    def last(self, split: str, metric: str) -> Optional[float]:
        values = self.history(split, metric)
        return values[-1] if values else None

    def summary(self) -> dict:
        final = OrderedDict()
        for epoch, split, metric, value in self.rows:
            final[f"{split}/{metric}"] = value
        return {"epochs": max([row[0] for row in self.rows], default=0), "final": final}

    def __eq__(self, other):
        assert(isinstance(other, Metrics))
        return self.rows == other.rows

    def __repr__(self):
        return f"Metrics(rows={len(self.rows)})"


def write_metrics_csv(path: str, metrics: Metrics):
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in metrics.rows:
            writer.writerow([epoch, split, metric, repr(value)])


def write_summary_json(path: str, metrics: Metrics, extra: Optional[dict] = None):
    summary = metrics.summary()
    summary.update(extra or {})
    with open(path, 'w') as file:
        json.dump(summary, file, indent=2, sort_keys=True)


def prepare(samples: List[Sample], assignment: Optional[IdentifierAssignment], config: ModelConfig,
            placement: Placement) -> List[AugmentedSample]:
    """Model inputs for a method: identifier-augmented, or framed without identifier."""
    assert(isinstance(samples, list))
    assert(isinstance(assignment, IdentifierAssignment) or assignment is None)
    assert(isinstance(config, ModelConfig))

    if config.mode == Mode.PREFIX:
        return [frame(sample, config.max_seq_len, reserved=config.prefix_len) for sample in samples]

    if assignment is None:
        return [frame(sample, config.max_seq_len) for sample in samples]

    missing = sorted({sample.user for sample in samples if sample.user not in assignment})
    if missing:
        raise ValueError(f"Identifier assignment has no entry for users {missing[:5]}")

    return [augment(sample, assignment[sample.user], placement, config.max_seq_len) for sample in samples]


def evaluate(params: Parameters, samples: List[Sample], assignment: Optional[IdentifierAssignment],
             placement: Placement = Placement.BOTH, users: Optional[Set[str]] = None,
             use_prefix: bool = True) -> EvalResult:
    """Argmax accuracy, ties going to the lowest class index. `users` restricts the reported subset."""
    assert(isinstance(params, Parameters))

    if users is not None:
        samples = [sample for sample in samples if sample.user in users]

    correct = OrderedDict()
    counts = OrderedDict()
    ambiguous_total, ambiguous_correct = 0, 0
    for sample in prepare(samples, assignment, params.config, placement):
        hit = int(np.argmax(predict_logits(params, sample, use_prefix))) == sample.label
        correct[sample.user] = correct.get(sample.user, 0) + int(hit)
        counts[sample.user] = counts.get(sample.user, 0) + 1
        if sample.ambiguous:
            ambiguous_total += 1
            ambiguous_correct += int(hit)

    total = sum(counts.values())
    return EvalResult(accuracy=sum(correct.values()) / total if total > 0 else 0.0,
                      per_user=OrderedDict((user, correct[user] / counts[user]) for user in counts),
                      counts=counts,
                      ambiguous_accuracy=ambiguous_correct / ambiguous_total if ambiguous_total > 0 else None,
                      total=total)


def run_epoch(params: Parameters, inputs: List[AugmentedSample], optimizer, mask: Mask, batch_size: int,
              rng: np.random.Generator, use_prefix: bool = True) -> float:
    """One shuffled pass of mini-batch updates; returns the sample-weighted mean batch loss."""
    order = rng.permutation(len(inputs))
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        batch = [inputs[i] for i in order[start:start + batch_size]]
        value, grads = loss_and_gradients(params, batch, use_prefix)
        optimizer.step(params, grads, mask)
        total += value * len(batch)
    return total / len(inputs)


class Trainer:
    logger = logging.getLogger()

    def __init__(self, dataset: SplitDataset, assignment: Optional[IdentifierAssignment], config: TrainConfig):
        assert(isinstance(dataset, SplitDataset))
        assert(isinstance(assignment, IdentifierAssignment) or assignment is None)
        assert(isinstance(config, TrainConfig))

        self.dataset = dataset
        self.assignment = assignment
        self.config = config

    def evaluate_splits(self, params: Parameters, metrics: Metrics, epoch: int, use_prefix: bool = True):
        for split in ["val", "test"]:
            samples = self.dataset.split(split)
            if len(samples) == 0:
                continue
            result = evaluate(params, samples, self.assignment, self.config.placement, use_prefix=use_prefix)
            metrics.record_eval(epoch, split, result)

    def fit(self, params: Parameters, mask: Mask, metrics: Metrics, use_prefix: bool = True,
            first_epoch: int = 1) -> Parameters:
        inputs = prepare(self.dataset.train, self.assignment, params.config, self.config.placement)
        if len(inputs) == 0:
            raise ValueError("Cannot train on an empty training split")

        optimizer = make_optimizer(self.config)
        for offset in range(self.config.epochs):
            epoch = first_epoch + offset
            rng = derive_rng(self.config.seed, "epoch", epoch)
            mean_loss = run_epoch(params, inputs, optimizer, mask, self.config.batch_size, rng, use_prefix)
            metrics.record(epoch, "train", "loss", mean_loss)

            evaluated = self.config.eval_every > 0 and \
                        (offset + 1 == self.config.epochs or (offset + 1) % self.config.eval_every == 0)
            if evaluated:
                self.evaluate_splits(params, metrics, epoch, use_prefix)

            self.logger.info(f"Epoch {epoch}: train loss {mean_loss:.4f}"
                             + (f", val accuracy {metrics.last('val', 'accuracy')}" if evaluated else ""))

        return params


def train(params: Parameters, dataset: SplitDataset, assignment: Optional[IdentifierAssignment],
          config: TrainConfig) -> Tuple[Parameters, Metrics]:
    """Mini-batch training of every shared parameter. Prefix-mode models train without their prefix."""
    assert(isinstance(params, Parameters))

    if params.config.mode != Mode.PREFIX and assignment is None and params.config.mode != Mode.TIED:
        raise ValueError(f"{params.config.mode.value} mode needs an identifier assignment")

    params = params.copy()
    metrics = Metrics()
    use_prefix = params.config.mode != Mode.PREFIX
    Trainer(dataset, assignment, config).fit(params, freeze_mask(params.config, 1), metrics, use_prefix)
    return params, metrics


def train_useradapter(params: Parameters, dataset: SplitDataset, config_phase1: TrainConfig,
                      config_phase2: TrainConfig) -> Tuple[Parameters, Metrics]:
    """Two-phase schedule: a user-agnostic model, then one round of prefix tuning per user with the model frozen."""
    assert(isinstance(params, Parameters))
    assert(isinstance(config_phase1, TrainConfig))
    assert(isinstance(config_phase2, TrainConfig))

    if params.config.mode != Mode.PREFIX:
        raise ValueError(f"UserAdapter training needs Prefix mode, not {params.config.mode.value}")

    params = params.copy()
    metrics = Metrics()

    Trainer.logger.info(f"Phase 1: training the shared model for {config_phase1.epochs} epochs")
    Trainer(dataset, None, config_phase1).fit(params, freeze_mask(params.config, 1), metrics, use_prefix=False)

    Trainer.logger.info(f"Phase 2: tuning prefixes of {len(dataset.users)} users for {config_phase2.epochs} epochs")
    losses = np.zeros(config_phase2.epochs)
    seen = 0
    for user in dataset.users:
        inputs = prepare(dataset.for_user(user).train, None, params.config, config_phase2.placement)
        if len(inputs) == 0:
            Trainer.logger.warning(f"User '{user}' has no training samples, prefix left at its initial value")
            continue

        optimizer = make_optimizer(config_phase2)
        mask = freeze_mask(params.config, 2, user)
        for epoch in range(config_phase2.epochs):
            rng = derive_rng(config_phase2.seed, "prefix", user, epoch)
            losses[epoch] += run_epoch(params, inputs, optimizer, mask, config_phase2.batch_size, rng) * len(inputs)
        seen += len(inputs)

        Trainer.logger.debug(f"Tuned prefix of user '{user}' on {len(inputs)} samples")

    for epoch in range(config_phase2.epochs):
        metrics.record(config_phase1.epochs + epoch + 1, "train", "loss", losses[epoch] / max(seen, 1))

    trainer = Trainer(dataset, None, config_phase2)
    trainer.evaluate_splits(params, metrics, config_phase1.epochs + config_phase2.epochs)

    return params, metrics
