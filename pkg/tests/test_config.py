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

import json

import pytest

from pyuserid.augment import Placement
from pyuserid.config import AblationSpec, ExperimentConfig
from pyuserid.identifiers import Scheme
from tests.helpers import small_experiment_dict


class TestAblationSpec:
    def test_defaults(self):
        spec = AblationSpec()

        assert(spec.types == (Scheme.NUM, Scheme.DEFAULT, Scheme.RAND_DIG, Scheme.RAND_NON, Scheme.RAND_ALL))
        assert(spec.lengths == (4, 8, 16, 48))
        assert(spec.placement == Placement.PREFIX)

    def test_unknown_type_is_an_error(self):
        with pytest.raises(ValueError):
            AblationSpec(types=["RandEmoji"])


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()

        assert(config.adapter.epochs == 10)
        assert(config.seed == 0)

    def test_from_dict(self):
        config = ExperimentConfig.from_dict(small_experiment_dict())

        assert(config.seed == 1)
        assert(config.model.d_model == 8)
        assert(config.ablation.lengths == (2, 8))
        assert(config.ablation.placement == Placement.BOTH)
        assert(config.federated.clients_per_round == 2)

    def test_dict_round_trip(self):
        config = ExperimentConfig.from_dict(small_experiment_dict())

        assert(ExperimentConfig.from_dict(config.to_dict()) == config)

    def test_unknown_field_is_an_error(self):
        data = small_experiment_dict()
        data["train"]["learning_rte"] = 0.1

        with pytest.raises(ValueError, match="learning_rte"):
            ExperimentConfig.from_dict(data)

    def test_unknown_section_is_an_error(self):
        with pytest.raises(ValueError, match="optimiser"):
            ExperimentConfig.from_dict({"optimiser": {}})

    def test_invalid_value_names_the_section(self):
        with pytest.raises(ValueError, match="'model'"):
            ExperimentConfig.from_dict({"model": {"d_model": 10, "n_heads": 3}})

    def test_hash_follows_every_field(self):
        config = ExperimentConfig.from_dict(small_experiment_dict())
        changed = small_experiment_dict()
        changed["train"]["learning_rate"] = 0.5

        assert(config.config_hash() == ExperimentConfig.from_dict(small_experiment_dict()).config_hash())
        assert(config.config_hash() != ExperimentConfig.from_dict(changed).config_hash())
        assert(config.config_hash() != config.for_seed(2).config_hash())

    def test_for_seed_reaches_every_seeded_section(self):
        config = ExperimentConfig().for_seed(7)

        assert((config.seed, config.model.seed, config.train.seed, config.adapter.seed, config.federated.seed) ==
               (7, 7, 7, 7, 7))

    def test_from_file(self, tmpdir):
        path = tmpdir.join("config.json")
        path.write(json.dumps(small_experiment_dict()))

        assert(ExperimentConfig.from_file(str(path)) == ExperimentConfig.from_dict(small_experiment_dict()))

    def test_missing_file_names_the_path(self, tmpdir):
        path = str(tmpdir.join("missing.json"))

        with pytest.raises(ValueError, match="Config file not found"):
            ExperimentConfig.from_file(path)

    def test_invalid_json_is_an_error(self, tmpdir):
        path = tmpdir.join("config.json")
        path.write("{not json")

        with pytest.raises(ValueError, match="not valid JSON"):
            ExperimentConfig.from_file(str(path))
