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

from collections import Counter, defaultdict

import numpy as np
import pytest

from pyuserid.augment import Sample
from pyuserid.data import AMBIGUOUS_PHRASE, DataConfig, Persona, few_shot_users, gen_synthetic, lexicon_corpus, \
    load_jsonl, save_jsonl, skew_filter, split_per_user, synthesize, user_names
from pyuserid.tokenizer import build_vocab
from pyuserid.util import stable_hash
from tests.helpers import small_vocab


def user_samples(user: str, positives: int, negatives: int):
    return [Sample(user, [3], 1) for _ in range(positives)] + [Sample(user, [3], 0) for _ in range(negatives)]


class TestGenSynthetic:
    def setup_method(self):
        self.vocab = small_vocab()

    def generate(self, **kwargs):
        settings = dict(n_users=4, samples_per_user=20, ambiguous_fraction=0.5, n_classes=2, vocab=self.vocab, seed=7)
        settings.update(kwargs)
        return gen_synthetic(**settings)

    def test_shapes(self):
        samples, profiles = self.generate()

        assert(len(samples) == 80)
        assert([profile.n_samples for profile in profiles] == [20] * 4)
        assert([profile.persona for profile in profiles] ==
               [Persona.LITERAL, Persona.SARCASTIC, Persona.LITERAL, Persona.SARCASTIC])
        assert(sum(sample.ambiguous for sample in samples) == 40)

    def test_ambiguous_label_follows_persona(self):
        samples, profiles = self.generate()
        personas = {profile.user: profile.persona for profile in profiles}
        phrase = [self.vocab.token_to_id[word] for word in AMBIGUOUS_PHRASE]

        for sample in samples:
            if sample.ambiguous:
                assert(sample.label == personas[sample.user].ambiguous_label(2))
                assert(any(sample.text[i:i + 4] == phrase for i in range(len(sample.text))))

    def test_user_agnostic_ceiling_on_ambiguous_subset(self):
        samples, _ = self.generate(ambiguous_fraction=1.0)

        labels = Counter(sample.label for sample in samples)
        best = max(labels.values()) / len(samples)

        assert(best == 0.5)

    def test_homogeneous_when_nothing_is_ambiguous(self):
        samples, _ = self.generate(ambiguous_fraction=0.0, samples_per_user=400)

        # content determines the label, so every user sees the same cue -> label mapping
        cue_labels = defaultdict(set)
        for sample in samples:
            for token in sample.text:
                cue_labels[token].add(sample.label)
        for word in ["awful", "wonderful"]:
            assert(len(cue_labels[self.vocab.token_to_id[word]]) == 1)

    def test_lengths_within_bounds(self):
        samples, _ = self.generate(min_len=12, max_len=14)

        assert(all(12 <= len(sample.text) <= 14 for sample in samples))

    def test_label_skew_leans_towards_persona(self):
        samples, _ = self.generate(ambiguous_fraction=0.0, label_skew=1.0)

        for sample in samples:
            assert(sample.label == (1 if sample.user in ["user0000", "user0002"] else 0))

    def test_three_personas_on_three_classes(self):
        samples, profiles = self.generate(n_classes=3, vocab=small_vocab_three_classes(), n_users=3)

        assert([profile.persona for profile in profiles] == [Persona.LITERAL, Persona.SARCASTIC, Persona.APATHETIC])
        assert({sample.label for sample in samples if sample.ambiguous} == {0, 1, 2})

    def test_same_seed_same_dataset(self):
        first, _ = self.generate()
        second, _ = self.generate()

        assert(first == second)

    def test_one_user_is_an_error(self):
        with pytest.raises(ValueError):
            self.generate(n_users=1)

    def test_one_class_is_an_error(self):
        with pytest.raises(ValueError):
            self.generate(n_classes=1)

    def test_fraction_out_of_range_is_an_error(self):
        with pytest.raises(ValueError):
            self.generate(ambiguous_fraction=1.5)


def small_vocab_three_classes():
    return build_vocab(lexicon_corpus(3, user_names(3)), max_size=200, extra_symbol_budget=10)


class TestSkewFilter:
    def test_threshold(self):
        samples = user_samples("kept", 9, 1) + user_samples("dropped", 7, 3) + user_samples("negative", 1, 9)

        kept = skew_filter(samples, 0.8)

        assert({sample.user for sample in kept} == {"kept", "negative"})
        assert(len(kept) == 20)

    def test_just_above_half_keeps_any_majority(self):
        samples = user_samples("a", 6, 4) + user_samples("b", 5, 5) + user_samples("c", 2, 8)

        kept = skew_filter(samples, 0.5 + 1e-9)

        assert({sample.user for sample in kept} == {"a", "c"})

    def test_idempotent(self):
        samples = user_samples("a", 9, 1) + user_samples("b", 7, 3)

        once = skew_filter(samples, 0.8)

        assert(skew_filter(once, 0.8) == once)

    def test_non_binary_labels_are_an_error(self):
        with pytest.raises(ValueError):
            skew_filter([Sample("a", [3], 2)], 0.8)

    def test_threshold_out_of_range_is_an_error(self):
        with pytest.raises(ValueError):
            skew_filter(user_samples("a", 1, 1), 0.5)

    def test_integer_threshold_keeps_only_single_label_users(self):
        samples = user_samples("pure", 10, 0) + user_samples("mixed", 9, 1)

        kept = skew_filter(samples, 1)

        assert({sample.user for sample in kept} == {"pure"})


class TestSplitPerUser:
    def test_ten_samples(self):
        dataset = split_per_user(user_samples("a", 5, 5), (0.8, 0.1, 0.1), seed=1)

        assert((len(dataset.train), len(dataset.val), len(dataset.test)) == (8, 1, 1))

    def test_three_samples(self):
        dataset = split_per_user(user_samples("a", 2, 1), (0.8, 0.1, 0.1), seed=1)

        assert((len(dataset.train), len(dataset.val), len(dataset.test)) == (1, 1, 1))

    def test_one_sample(self):
        dataset = split_per_user(user_samples("a", 1, 0), (0.8, 0.1, 0.1), seed=1)

        assert((len(dataset.train), len(dataset.val), len(dataset.test)) == (1, 0, 0))

    def test_disjoint_and_complete_for_random_sizes(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            samples = []
            for user in range(5):
                n = int(rng.integers(1, 60))
                samples += [Sample(f"u{user}", [trial, user, index], index % 2) for index in range(n)]

            dataset = split_per_user(samples, (0.8, 0.1, 0.1), seed=trial)

            for user in dataset.users:
                own = [sample for sample in samples if sample.user == user]
                part = dataset.for_user(user)
                assert(sorted(map(hash, part.train + part.val + part.test)) == sorted(map(hash, own)))
                if len(own) >= 3:
                    assert(len(part.val) == max(1, int(0.1 * len(own) + 1e-9)))
                    assert(len(part.test) == max(1, int(0.1 * len(own) + 1e-9)))

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ValueError):
            split_per_user(user_samples("a", 2, 2), (0.5, 0.1, 0.1), seed=1)

    def test_deterministic(self):
        samples = user_samples("a", 10, 10) + user_samples("b", 3, 3)

        first = split_per_user(samples, (0.8, 0.1, 0.1), seed=4)
        second = split_per_user(samples, (0.8, 0.1, 0.1), seed=4)

        assert(first.train == second.train and first.val == second.val and first.test == second.test)


class TestFewShotUsers:
    def test_users_below_the_threshold(self):
        samples = user_samples("small", 10, 10) + user_samples("large", 30, 30)

        assert(few_shot_users(samples, 50) == {"small"})


class TestJsonl:
    def setup_method(self):
        self.vocab = small_vocab()

    def test_round_trip(self, tmpdir):
        path = str(tmpdir.join("data.jsonl"))
        samples, _ = gen_synthetic(2, 5, 0.4, 2, self.vocab, seed=3)

        save_jsonl(path, samples, self.vocab)

        assert(load_jsonl(path, self.vocab) == samples)

    def test_missing_label_names_the_line(self, tmpdir):
        path = tmpdir.join("data.jsonl")
        path.write('{"user": "a", "text": "movie", "label": 1}\n{"user": "a", "text": "movie"}\n')

        with pytest.raises(ValueError, match=":2"):
            load_jsonl(str(path), self.vocab)

    def test_empty_file(self, tmpdir):
        path = tmpdir.join("data.jsonl")
        path.write('')

        assert(load_jsonl(str(path), self.vocab) == [])

    def test_ambiguous_flag_is_optional(self, tmpdir):
        path = tmpdir.join("data.jsonl")
        path.write('{"user": "a", "text": "wonderful movie", "label": 1}\n')

        samples = load_jsonl(str(path), self.vocab)

        assert(samples[0].ambiguous is False)
        assert(samples[0].text == [self.vocab.token_to_id["wonderful"], self.vocab.token_to_id["movie"]])

    def test_ambiguous_flag_must_be_a_boolean(self, tmpdir):
        path = tmpdir.join("data.jsonl")
        path.write('{"user": "a", "text": "movie", "label": 1, "ambiguous": false}\n'
                   '{"user": "a", "text": "movie", "label": 1, "ambiguous": "false"}\n')

        with pytest.raises(ValueError, match=":2"):
            load_jsonl(str(path), self.vocab)


class TestSynthesize:
    def test_default_config_is_reproducible(self):
        config = DataConfig(n_users=20, samples_per_user=100, ambiguous_fraction=0.5)

        _, first, _ = synthesize(config, 7)
        _, second, _ = synthesize(config, 7)

        checksum = stable_hash([[s.user, s.text, s.label, s.ambiguous] for s in first])
        assert(checksum == stable_hash([[s.user, s.text, s.label, s.ambiguous] for s in second]))
        assert(len(first) == 2000)

    def test_skew_threshold_drops_balanced_users(self):
        config = DataConfig(n_users=6, samples_per_user=20, ambiguous_fraction=0.0, label_skew=0.0,
                            skew_threshold=0.95)

        _, samples, profiles = synthesize(config, 1)

        assert({sample.user for sample in samples} == {profile.user for profile in profiles})
