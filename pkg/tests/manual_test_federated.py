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

import logging
import sys

import attr
import numpy as np

from pyuserid.config import ExperimentConfig
from pyuserid.harness import experiment_data, run_federated_experiment
from pyuserid.identifiers import Scheme

logging.basicConfig(format='%(asctime)-15s %(levelname)-8s %(message)s', level=logging.INFO)

# usage: manual_test_federated.py [config.json] [repetitions]
config = ExperimentConfig.from_file(sys.argv[1]) if len(sys.argv) > 1 else ExperimentConfig()
repetitions = int(sys.argv[2]) if len(sys.argv) > 2 else 3
print("Running federated personalization with the following parameters: ", sys.argv)

# the skewed set keeps users whose labels are at least 80% one class
if config.data.skew_threshold is None:
    config = attr.evolve(config, data=attr.evolve(config.data, skew_threshold=0.8, label_skew=0.9))

personalized, conventional = [], []
for repetition in range(repetitions):
    run_config = config.for_seed(config.seed + repetition)
    vocab, dataset = experiment_data(run_config, run_config.seed)
    print(f"Seed {run_config.seed}: {len(dataset.users)} users after the skew filter")

    _, reports, _ = run_federated_experiment(run_config, dataset, vocab, Scheme.RAND_ALL,
                                             run_config.ablation.compare_length)
    personalized.append(reports[-1].accuracy)
    _, reports, _ = run_federated_experiment(run_config, dataset, vocab, None, 0)
    conventional.append(reports[-1].accuracy)

gap = 100 * (np.mean(personalized) - np.mean(conventional))
print(f"Federated UserIdentifier {np.mean(personalized):.4f}, conventional {np.mean(conventional):.4f}, "
      f"gap {gap:.2f} points")
assert(gap >= 5.0)
