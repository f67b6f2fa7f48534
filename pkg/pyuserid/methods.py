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
from typing import Dict, List, Optional, Set

import attr

from pyuserid.api import PersonalizationApi
from pyuserid.data import SplitDataset
from pyuserid.identifiers import IdentifierAssignment, Scheme, assign
from pyuserid.model import Mode, ModelConfig, Parameters, init
from pyuserid.tokenizer import Vocabulary
from pyuserid.trainer import EvalResult, Metrics, TrainConfig, evaluate, train, train_useradapter


def default_usernames(users: List[str]) -> Dict[str, str]:
    """Synthetic data has no real usernames, so each user id stands in for one."""
    return {user: user for user in users}


class Method(PersonalizationApi):
    logger = logging.getLogger()

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig):
        assert(isinstance(model_config, ModelConfig))
        assert(isinstance(train_config, TrainConfig))

        self.model_config = model_config
        self.train_config = train_config
        self.assignment = None
        self.params = None
        self.metrics = None

    @property
    def id_type(self) -> str:
        return ""

    @property
    def id_len(self) -> int:
        return 0

    def _model_config(self, dataset: SplitDataset, **changes) -> ModelConfig:
        return attr.evolve(self.model_config, users=tuple(dataset.users), **changes)

    def evaluate(self, samples, users: Optional[Set[str]] = None) -> EvalResult:
        if self.params is None:
            raise ValueError(f"{self.name} has not been fitted yet")
        return evaluate(self.params, samples, self.assignment, self.train_config.placement, users=users,
                        use_prefix=True)

    def parameters(self) -> Parameters:
        return self.params

    def __repr__(self):
        return f"{self.name}(id_type={self.id_type!r}, id_len={self.id_len})"


class ConventionalMethod(Method):
    """One shared model, no user signal."""

    @property
    def name(self) -> str:
        return "Conventional"

    def fit(self, dataset: SplitDataset) -> Metrics:
        self.logger.info(f"Fitting {self}")
        params = init(self._model_config(dataset, mode=Mode.TIED))
        self.params, self.metrics = train(params, dataset, None, self.train_config)
        return self.metrics


class UserIdentifierMethod(Method):
    """Identifier tokens embedded through the shared token table."""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, vocab: Vocabulary,
                 scheme: Scheme, length: int, seed: int, usernames: Optional[Dict[str, str]] = None):
        super().__init__(model_config, train_config)

        assert(isinstance(vocab, Vocabulary))
        assert(isinstance(scheme, Scheme))
        assert(isinstance(length, int))

        self.vocab = vocab
        self.scheme = scheme
        self.length = length
        self.seed = seed
        self.usernames = usernames

    @property
    def name(self) -> str:
        return "UserIdentifier"

    @property
    def id_type(self) -> str:
        return self.scheme.value

    @property
    def id_len(self) -> int:
        # Num and Default identifiers take whatever length tokenization gives them
        if self.assignment is not None and not self.scheme.is_random:
            return max(len(self.assignment[user]) for user in self.assignment.users)
        return self.length

    def make_assignment(self, users: List[str]) -> IdentifierAssignment:
        return assign(users, self.scheme, self.length, self.vocab, self.seed,
                      usernames=self.usernames or default_usernames(users))

    def fit(self, dataset: SplitDataset) -> Metrics:
        self.assignment = self.make_assignment(dataset.users)
        self.logger.info(f"Fitting {self}")
        params = init(self._model_config(dataset, mode=Mode.TIED))
        self.params, self.metrics = train(params, dataset, self.assignment, self.train_config)
        return self.metrics


class UntiedEmbeddingMethod(UserIdentifierMethod):
    """Identifier positions read a separate trainable table of per-user vectors."""

    @property
    def name(self) -> str:
        return "UntiedUserEmb"

    def fit(self, dataset: SplitDataset) -> Metrics:
        self.assignment = self.make_assignment(dataset.users)
        lengths = {len(self.assignment[user]) for user in self.assignment.users}
        if len(lengths) != 1:
            raise ValueError(f"Untied user embeddings need identifiers of one length, "
                             f"{self.scheme.value} gives {sorted(lengths)}")

        self.logger.info(f"Fitting {self}")
        params = init(self._model_config(dataset, mode=Mode.UNTIED, user_emb_len=lengths.pop()))
        self.params, self.metrics = train(params, dataset, self.assignment, self.train_config)
        return self.metrics


class UserAdapterMethod(Method):
    """A user-agnostic model, then per-user prefix vectors tuned with the model frozen."""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, adapter_config: TrainConfig,
                 prefix_length: int):
        super().__init__(model_config, train_config)

        assert(isinstance(adapter_config, TrainConfig))
        assert(isinstance(prefix_length, int))

        self.adapter_config = adapter_config
        self.prefix_length = prefix_length

    @property
    def name(self) -> str:
        return "UserAdapter"

    @property
    def id_len(self) -> int:
        return self.prefix_length

    def fit(self, dataset: SplitDataset) -> Metrics:
        self.logger.info(f"Fitting {self}")
        params = init(self._model_config(dataset, mode=Mode.PREFIX, prefix_len=self.prefix_length))
        self.params, self.metrics = train_useradapter(params, dataset, self.train_config, self.adapter_config)
        return self.metrics
