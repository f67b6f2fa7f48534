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

import attr

from pyuserid.augment import Placement
from pyuserid.data import DataConfig
from pyuserid.federated import FedConfig
from pyuserid.identifiers import Scheme
from pyuserid.model import ModelConfig
from pyuserid.trainer import TrainConfig
from pyuserid.util import stable_hash


def _schemes(values) -> tuple:
    return tuple(Scheme(value) for value in values)


def _lengths(values) -> tuple:
    return tuple(int(value) for value in values)


@attr.s(frozen=True)
class AblationSpec:
    types = attr.ib(default=("Num", "Default", "RandDig", "RandNon", "RandAll"), converter=_schemes)
    # 4/8/16/48 of 64 positions are the 5/10/20/50 of 512 scaled to the desk model, rounded
    lengths = attr.ib(default=(4, 8, 16, 48), converter=_lengths)
    repetitions = attr.ib(default=3, validator=attr.validators.instance_of(int))
    placement = attr.ib(default=Placement.PREFIX, converter=Placement)
    workers = attr.ib(default=1, validator=attr.validators.instance_of(int))
    compare_length = attr.ib(default=8, validator=attr.validators.instance_of(int))
    prefix_length = attr.ib(default=4, validator=attr.validators.instance_of(int))

    def to_dict(self) -> dict:
        result = attr.asdict(self, recurse=False)
        result["types"] = [scheme.value for scheme in self.types]
        result["lengths"] = list(self.lengths)
        result["placement"] = self.placement.value
        return result


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "adapter": TrainConfig,
    "federated": FedConfig,
    "ablation": AblationSpec,
}


def _section(name: str, data) -> object:
    if not isinstance(data, dict):
        raise ValueError(f"Config section '{name}' must be an object, got {type(data).__name__}")

    cls = SECTIONS[name]
    known = {field.name for field in attr.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown field(s) {unknown} in config section '{name}'")

    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ValueError(f"Invalid config section '{name}': {e}")


def _section_dict(value) -> dict:
    if hasattr(value, "to_dict"):
        return value.to_dict()
    result = attr.asdict(value, recurse=False)
    return {key: list(item) if isinstance(item, tuple) else item for key, item in result.items()}


@attr.s(frozen=True)
class ExperimentConfig:
    data = attr.ib(factory=DataConfig)
    model = attr.ib(factory=ModelConfig)
    train = attr.ib(factory=TrainConfig)
    adapter = attr.ib(factory=lambda: TrainConfig(epochs=10, learning_rate=1e-2))
    federated = attr.ib(factory=FedConfig)
    ablation = attr.ib(factory=AblationSpec)
    seed = attr.ib(default=0, validator=attr.validators.instance_of(int))

    @staticmethod
    def from_dict(data: dict) -> 'ExperimentConfig':
        assert(isinstance(data, dict))

        unknown = sorted(set(data) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ValueError(f"Unknown config section(s) {unknown}")

        sections = {name: _section(name, data[name]) for name in SECTIONS if name in data}
        if "seed" in data:
            sections["seed"] = data["seed"]
        return ExperimentConfig(**sections)

    @staticmethod
    def from_file(path: str) -> 'ExperimentConfig':
        assert(isinstance(path, str))

        try:
            with open(path, 'r') as file:
                data = json.load(file)
        except FileNotFoundError:
            raise ValueError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ValueError(f"Config file {path} is not valid JSON: {e}")

        if not isinstance(data, dict):
            raise ValueError(f"Config file {path} must hold a JSON object")
        return ExperimentConfig.from_dict(data)

    def to_dict(self) -> dict:
        result = {name: _section_dict(getattr(self, name)) for name in SECTIONS}
        result["seed"] = self.seed
        return result

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def for_seed(self, seed: int) -> 'ExperimentConfig':
        """The same experiment with every seeded component driven by `seed`."""
        assert(isinstance(seed, int))

        return attr.evolve(self,
                           seed=seed,
                           model=attr.evolve(self.model, seed=seed),
                           train=attr.evolve(self.train, seed=seed),
                           adapter=attr.evolve(self.adapter, seed=seed),
                           federated=attr.evolve(self.federated, seed=seed))
