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
import logging
from collections import OrderedDict
from functools import partial
from pprint import pformat
from typing import List, Optional, Tuple

import attr
import numpy as np

from pyuserid.api import dispatch
from pyuserid.augment import Placement, Sample
from pyuserid.autodiff import Tape
from pyuserid.data import SplitDataset
from pyuserid.identifiers import IdentifierAssignment
from pyuserid.model import ModelConfig, Parameters, freeze_mask, init, loss
from pyuserid.trainer import Sgd, evaluate, prepare, run_epoch
from pyuserid.util import derive_rng


def _at_least_one(instance, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be at least 1, got {value}")


def _non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError(f"{attribute.name} must not be negative, got {value}")


@attr.s(frozen=True)
class FedConfig:
    n_rounds = attr.ib(default=10, validator=[attr.validators.instance_of(int), _non_negative])
    clients_per_round = attr.ib(default=5, validator=[attr.validators.instance_of(int), _at_least_one])
    local_epochs = attr.ib(default=1, validator=[attr.validators.instance_of(int), _non_negative])
    local_batch_size = attr.ib(default=16, validator=[attr.validators.instance_of(int), _at_least_one])
    local_lr = attr.ib(default=0.05, converter=float, validator=_non_negative)
    seed = attr.ib(default=0, validator=attr.validators.instance_of(int))
    placement = attr.ib(default=Placement.BOTH, converter=Placement)
    workers = attr.ib(default=1, validator=[attr.validators.instance_of(int), _at_least_one])

    def to_dict(self) -> dict:
        result = attr.asdict(self, recurse=False)
        result["placement"] = self.placement.value
        return result


class ClientUpdate:
    def __init__(self, client: str, params: Parameters, n_samples: int, mean_loss: float):
        assert(isinstance(client, str))
        assert(isinstance(params, Parameters))
        assert(isinstance(n_samples, int))
        assert(n_samples >= 1)

        self.client = client
        self.params = params
        self.n_samples = n_samples
        self.mean_loss = mean_loss

    def __repr__(self):
        return f"ClientUpdate(client={self.client}, n_samples={self.n_samples}, mean_loss={self.mean_loss})"


class RoundReport:
    def __init__(self, round_index: int, clients: List[str], accuracy: float, mean_loss: float):
        assert(isinstance(round_index, int))
        assert(isinstance(clients, list))
        assert(0.0 <= accuracy <= 1.0)

        self.round_index = round_index
        self.clients = clients
        self.accuracy = accuracy
        self.mean_loss = mean_loss

    def __eq__(self, other):
        assert(isinstance(other, RoundReport))
        return self.round_index == other.round_index and \
               self.clients == other.clients and \
               self.accuracy == other.accuracy and \
               self.mean_loss == other.mean_loss

    def __repr__(self):
        return pformat(vars(self))


def local_update(global_params: Parameters, client: str, samples: List[Sample],
                 assignment: Optional[IdentifierAssignment], config: FedConfig,
                 round_index: int = 0) -> Optional[ClientUpdate]:
    """Local SGD from a copy of the global model; None for a client without samples."""
    assert(isinstance(global_params, Parameters))
    assert(isinstance(config, FedConfig))

    if len(samples) == 0:
        logging.getLogger().warning(f"Client '{client}' has no training samples, skipping it")
        return None

    inputs = prepare(samples, assignment, global_params.config, config.placement)
    params = global_params.copy()
    optimizer = Sgd(config.local_lr)
    mask = freeze_mask(params.config, 1)

    losses = []
    for epoch in range(config.local_epochs):
        rng = derive_rng(config.seed, "client", client, round_index, epoch)
        losses.append(run_epoch(params, inputs, optimizer, mask, config.local_batch_size, rng))

    if not losses:
        losses.append(float(loss(params, inputs, Tape()).value[0, 0]))

    return ClientUpdate(client=client, params=params, n_samples=len(inputs), mean_loss=float(np.mean(losses)))


def aggregate(updates: List[ClientUpdate]) -> Parameters:
    """Sample-count weighted mean of client weights, summed in client-id order."""
    assert(isinstance(updates, list))

    if len(updates) == 0:
        raise ValueError("Cannot aggregate an empty list of client updates")

    updates = sorted(updates, key=lambda update: update.client)
    base = updates[0].params
    for update in updates[1:]:
        if update.params.names != base.names:
            raise ValueError(f"Update of client '{update.client}' has parameters {update.params.names}, "
                             f"expected {base.names}")
        for name, value in update.params.items():
            if value.shape != base[name].shape:
                raise ValueError(f"Update of client '{update.client}' has shape {value.shape} for '{name}', "
                                 f"expected {base[name].shape}")

    total = sum(update.n_samples for update in updates)

    # Weighted deltas against the first client: identical updates come back bitwise unchanged
    tensors = OrderedDict()
    for name, value in base.items():
        delta = np.zeros_like(value)
        for update in updates[1:]:
            delta += (update.n_samples / total) * (update.params[name] - value)
        tensors[name] = value + delta

    return Parameters(base.config, tensors)


def sample_clients(users: List[str], clients_per_round: int, seed: int, round_index: int) -> List[str]:
    chosen = derive_rng(seed, "round", round_index).choice(len(users), size=clients_per_round, replace=False)
    return [users[index] for index in sorted(chosen.tolist())]


def run(dataset: SplitDataset, assignment: Optional[IdentifierAssignment], model_config: ModelConfig,
        config: FedConfig, params: Optional[Parameters] = None) -> Tuple[Parameters, List[RoundReport]]:
    """FedAvg rounds: sample clients, train them locally from the global model, average, evaluate on test."""
    assert(isinstance(dataset, SplitDataset))
    assert(isinstance(model_config, ModelConfig))
    assert(isinstance(config, FedConfig))

    logger = logging.getLogger()

    users = sorted(dataset.users)
    if not 1 <= config.clients_per_round <= len(users):
        raise ValueError(f"clients_per_round {config.clients_per_round} must lie in [1, {len(users)}]")

    global_params = params.copy() if params is not None else init(model_config)
    client_data = {user: dataset.for_user(user).train for user in users}

    reports = []
    for round_index in range(1, config.n_rounds + 1):
        clients = sample_clients(users, config.clients_per_round, config.seed, round_index)
        results = dispatch([partial(local_update, global_params, client, client_data[client], assignment,
                                    config, round_index) for client in clients], config.workers)
        updates = [update for update in results if update is not None]

        if updates:
            global_params = aggregate(updates)
        else:
            logger.warning(f"Round {round_index}: no client produced an update, global model unchanged")

        accuracy = evaluate(global_params, dataset.test, assignment, config.placement).accuracy \
            if dataset.test else 0.0
        mean_loss = float(np.mean([update.mean_loss for update in updates])) if updates else float('nan')
        reports.append(RoundReport(round_index, [update.client for update in updates], accuracy, mean_loss))

        logger.info(f"Round {round_index}: {len(updates)} clients, mean local loss {mean_loss:.4f}, "
                    f"test accuracy {accuracy:.4f}")

    return global_params, reports


def write_rounds_csv(path: str, reports: List[RoundReport], append: bool = False):
    with open(path, 'a' if append else 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        if not append:
            writer.writerow(["round", "clients", "accuracy", "mean_loss"])
        for report in reports:
            writer.writerow([report.round_index, ';'.join(report.clients), repr(report.accuracy),
                             repr(report.mean_loss)])
