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

import attr
import numpy as np
import pytest

from pyuserid.config import ExperimentConfig
from pyuserid.harness import CONVENTIONAL, USER_ADAPTER, USER_IDENTIFIER, build_method, experiment_data
from pyuserid.identifiers import Scheme
from pyuserid.methods import ConventionalMethod, UntiedEmbeddingMethod, UserAdapterMethod, UserIdentifierMethod, \
    default_usernames
from pyuserid.model import Mode, init, loss as model_loss
from pyuserid.trainer import TrainConfig, evaluate, prepare
from tests.helpers import cue_dataset, small_vocab, tiny_config


def mean_loss(params, inputs, chunk: int = 64) -> float:
    total = 0.0
    for start in range(0, len(inputs), chunk):
        batch = inputs[start:start + chunk]
        total += model_loss(params, batch).value[0, 0] * len(batch)
    return total / len(inputs)


class TestMethods:
    def setup_method(self):
        self.vocab = small_vocab()
        self.dataset = cue_dataset(self.vocab, n_users=3)
        self.model_config = tiny_config(self.vocab.size)
        self.train_config = TrainConfig(epochs=1, batch_size=4)

    def test_default_usernames(self):
        assert(default_usernames(["a", "b"]) == {"a": "a", "b": "b"})

    def test_evaluate_before_fit_is_an_error(self):
        with pytest.raises(ValueError):
            ConventionalMethod(self.model_config, self.train_config).evaluate(self.dataset.test)

    def test_conventional(self):
        method = ConventionalMethod(self.model_config, self.train_config)

        method.fit(self.dataset)

        assert(method.name == "Conventional")
        assert(method.assignment is None)
        assert(method.parameters().config.mode == Mode.TIED)
        assert(method.evaluate(self.dataset.test).total == 6)

    def test_user_identifier(self):
        method = UserIdentifierMethod(self.model_config, self.train_config, self.vocab, Scheme.RAND_NON, 3, seed=2)

        method.fit(self.dataset)

        assert((method.name, method.id_type, method.id_len) == ("UserIdentifier", "RandNon", 3))
        assert(sorted(method.assignment.users) == sorted(self.dataset.users))

    def test_num_identifiers_report_their_natural_length(self):
        method = UserIdentifierMethod(self.model_config, self.train_config, self.vocab, Scheme.NUM, 0, seed=2)

        method.fit(self.dataset)

        assert(method.id_len == 1)

    def test_default_identifiers_use_the_user_id(self):
        method = UserIdentifierMethod(self.model_config, self.train_config, self.vocab, Scheme.DEFAULT, 0, seed=2)

        assignment = method.make_assignment(self.dataset.users)

        assert(assignment["user0001"].ids == [self.vocab.token_to_id["user0001"]])

    def test_untied_embedding(self):
        method = UntiedEmbeddingMethod(self.model_config, self.train_config, self.vocab, Scheme.RAND_ALL, 2, seed=2)

        method.fit(self.dataset)

        params = method.parameters()
        assert(params.config.mode == Mode.UNTIED)
        assert(params["user_embedding"].shape == (3, 2, 8))
        assert(method.name == "UntiedUserEmb")

    def test_user_adapter(self):
        method = UserAdapterMethod(self.model_config, self.train_config, TrainConfig(epochs=1, batch_size=2), 2)

        method.fit(self.dataset)

        assert(method.parameters()["prefix_table"].shape == (3, 2, 8))
        assert((method.name, method.id_len) == ("UserAdapter", 2))
        assert(0.0 <= method.evaluate(self.dataset.test).accuracy <= 1.0)


class TestSyntheticHeterogeneity:
    """Default experiment: 20 users of two personas, half of each user's samples ambiguous."""

    def setup_method(self):
        self.config = ExperimentConfig().for_seed(0)
        self.vocab, self.dataset = experiment_data(self.config, self.config.seed)

    @pytest.mark.timeout(600)
    def test_user_agnostic_model_stays_near_chance_on_ambiguous_samples(self):
        method = build_method(CONVENTIONAL, self.config, self.vocab)
        method.fit(self.dataset)

        assert(method.evaluate(self.dataset.test).ambiguous_accuracy <= 0.55)

    @pytest.mark.timeout(600)
    def test_identifiers_resolve_ambiguous_samples(self):
        method = build_method(USER_IDENTIFIER, self.config, self.vocab, Scheme.RAND_ALL, 8)
        method.fit(self.dataset)

        assert(method.evaluate(self.dataset.test).ambiguous_accuracy >= 0.90)

    @pytest.mark.timeout(900)
    def test_tuned_prefixes_do_not_lose_ambiguous_accuracy(self):
        # given
        method = build_method(USER_ADAPTER, self.config, self.vocab)

        # when
        method.fit(self.dataset)

        # then
        params = method.parameters()
        shared_only = evaluate(params, self.dataset.test, None, use_prefix=False)
        with_prefix = evaluate(params, self.dataset.test, None, use_prefix=True)
        assert(with_prefix.ambiguous_accuracy >= shared_only.ambiguous_accuracy)

    @pytest.mark.timeout(600)
    def test_loss_falls_over_the_first_epoch(self):
        before, after = [], []
        for seed in [0, 1, 2]:
            config = self.config.for_seed(seed)
            config = attr.evolve(config, train=attr.evolve(config.train, epochs=1))
            vocab, dataset = experiment_data(config, seed)
            method = build_method(USER_IDENTIFIER, config, vocab, Scheme.RAND_ALL, 8)
            method.fit(dataset)

            trained = method.parameters()
            inputs = prepare(dataset.train, method.assignment, trained.config, config.train.placement)
            before.append(mean_loss(init(trained.config), inputs))
            after.append(mean_loss(trained, inputs))

        assert(np.mean(after) < np.mean(before))
