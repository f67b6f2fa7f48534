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

from pyuserid.augment import Sample
from pyuserid.data import SplitDataset, lexicon_corpus, user_names
from pyuserid.model import Mode, ModelConfig
from pyuserid.tokenizer import build_vocab


def small_vocab(n_users: int = 4, extra_symbol_budget: int = 40):
    return build_vocab(lexicon_corpus(2, user_names(n_users)), max_size=200, extra_symbol_budget=extra_symbol_budget)


def tiny_config(vocab_size: int, mode: Mode = Mode.TIED, users=(), **changes) -> ModelConfig:
    settings = dict(d_model=8, n_heads=2, n_layers=1, vocab_size=vocab_size, n_classes=2, max_seq_len=16,
                    mode=mode, users=tuple(users), seed=3)
    settings.update(changes)
    return ModelConfig(**settings)


def cue_dataset(vocab, n_users: int = 2, per_user: int = 6) -> SplitDataset:
    """Separable toy data: label 1 samples hold 'wonderful', label 0 samples hold 'awful'."""
    positive, negative, filler = vocab.token_to_id["wonderful"], vocab.token_to_id["awful"], vocab.token_to_id["movie"]

    train, test = [], []
    for user in user_names(n_users):
        for index in range(per_user):
            label = index % 2
            text = [filler, positive if label == 1 else negative, filler]
            (test if index >= per_user - 2 else train).append(Sample(user, text, label))
    return SplitDataset(train=train, val=[], test=test)


def small_experiment_dict() -> dict:
    """An experiment config small enough to train every method in a unit test."""
    return {
        "seed": 1,
        "data": {"n_users": 3, "samples_per_user": 10, "min_len": 5, "max_len": 8, "vocab_size": 200,
                 "extra_symbol_budget": 40},
        "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "max_seq_len": 16},
        "train": {"epochs": 1, "batch_size": 8},
        "adapter": {"epochs": 1, "batch_size": 8},
        "federated": {"n_rounds": 2, "clients_per_round": 2, "local_batch_size": 8},
        "ablation": {"types": ["RandDig", "Num"], "lengths": [2, 8], "repetitions": 1, "placement": "Both",
                     "compare_length": 2, "prefix_length": 2},
    }
