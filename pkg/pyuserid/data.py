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
import logging
import math
from collections import Counter, OrderedDict
from enum import Enum
from pprint import pformat
from typing import Dict, Iterator, List, Optional, Set, Tuple

import attr
import numpy as np

from pyuserid.augment import Sample
from pyuserid.tokenizer import Vocabulary, build_vocab, decode, encode
from pyuserid.util import derive_rng

FILLER_WORDS = [
    "the", "a", "movie", "film", "plot", "actor", "actress", "scene", "story", "time",
    "really", "was", "it", "and", "of", "this", "with", "for", "but", "so",
    "very", "ending", "music", "cast", "director", "script", "we", "saw", "on", "friday",
    "my", "friend", "said", "after", "two", "hours", "in", "cinema", "popcorn", "ticket",
    "again", "then", "some", "characters", "dialogue", "camera", "sequel", "trailer", "night", "overall"
]

NEGATIVE_CUES = ["awful", "terrible", "boring", "dreadful", "worst"]
POSITIVE_CUES = ["wonderful", "excellent", "brilliant", "superb", "loved"]
NEUTRAL_CUES = ["okay", "mediocre", "average", "passable", "fine"]

# Shared by every persona, the label it carries depends on who wrote it
AMBIGUOUS_PHRASE = ["that", "is", "just", "great"]


class Persona(Enum):
    LITERAL = "Literal"
    SARCASTIC = "Sarcastic"
    APATHETIC = "Apathetic"

    def ambiguous_label(self, n_classes: int) -> int:
        """Literal reads the phrase as positive, Sarcastic as negative, Apathetic as the middle class.

        With two classes there is no middle, so Apathetic falls on the negative class.
        """
        assert(isinstance(n_classes, int))

        if self == Persona.LITERAL:
            return n_classes - 1
        elif self == Persona.SARCASTIC:
            return 0
        else:
            return n_classes // 2 if n_classes >= 3 else 0


def default_personas(n_classes: int) -> List[Persona]:
    if n_classes == 2:
        return [Persona.LITERAL, Persona.SARCASTIC]
    return [Persona.LITERAL, Persona.SARCASTIC, Persona.APATHETIC]


def class_cues(label: int, n_classes: int) -> List[str]:
    assert(isinstance(label, int))
    assert(isinstance(n_classes, int))

    if label == 0:
        return NEGATIVE_CUES
    elif label == n_classes - 1:
        return POSITIVE_CUES
    elif n_classes >= 3 and label == n_classes // 2:
        return NEUTRAL_CUES
    else:
        return [f"grade{label}{letter}" for letter in "abcde"]


def user_names(n_users: int) -> List[str]:
    return [f"user{index:04d}" for index in range(n_users)]


def lexicon_corpus(n_classes: int, users: Optional[List[str]] = None) -> Iterator[str]:
    """Lines covering every word the generator emits, plus the user names used as Default identifiers."""
    yield ' '.join(FILLER_WORDS)
    yield ' '.join(AMBIGUOUS_PHRASE)
    for label in range(n_classes):
        yield ' '.join(class_cues(label, n_classes))
    for user in users or []:
        yield user


class UserProfile:
    def __init__(self, user: str, persona: Persona, n_samples: int):
        assert(isinstance(user, str))
        assert(isinstance(persona, Persona))
        assert(isinstance(n_samples, int))
        assert(n_samples >= 1)

        self.user = user
        self.persona = persona
        self.n_samples = n_samples

    def __eq__(self, other):
        assert(isinstance(other, UserProfile))
        return self.user == other.user and \
               self.persona == other.persona and \
               self.n_samples == other.n_samples

    def __repr__(self):
        return pformat(vars(self))


class SplitDataset:
    def __init__(self, train: List[Sample], val: List[Sample], test: List[Sample]):
        assert(isinstance(train, list))
        assert(isinstance(val, list))
        assert(isinstance(test, list))

        self.train = train
        self.val = val
        self.test = test

    @property
    def users(self) -> List[str]:
        return list(OrderedDict.fromkeys(sample.user for sample in self.train + self.val + self.test))

    def split(self, name: str) -> List[Sample]:
        assert(name in ["train", "val", "test"])
        return getattr(self, name)

    def for_user(self, user: str) -> 'SplitDataset':
        return SplitDataset(train=[sample for sample in self.train if sample.user == user],
                            val=[sample for sample in self.val if sample.user == user],
                            test=[sample for sample in self.test if sample.user == user])

    def __repr__(self):
        return f"SplitDataset(train={len(self.train)}, val={len(self.val)}, test={len(self.test)}, " \
               f"users={len(self.users)})"


@attr.s(frozen=True)
class DataConfig:
    n_users = attr.ib(default=20, validator=attr.validators.instance_of(int))
    samples_per_user = attr.ib(default=100, validator=attr.validators.instance_of(int))
    ambiguous_fraction = attr.ib(default=0.5, converter=float)
    n_classes = attr.ib(default=2, validator=attr.validators.instance_of(int))
    personas = attr.ib(default=None, converter=attr.converters.optional(tuple))
    label_skew = attr.ib(default=0.0, converter=float)
    min_len = attr.ib(default=10, validator=attr.validators.instance_of(int))
    max_len = attr.ib(default=30, validator=attr.validators.instance_of(int))
    skew_threshold = attr.ib(default=None, converter=attr.converters.optional(float))
    vocab_size = attr.ib(default=2000, validator=attr.validators.instance_of(int))
    extra_symbol_budget = attr.ib(default=400, validator=attr.validators.instance_of(int))

    def persona_list(self) -> Optional[List[Persona]]:
        return None if self.personas is None else [Persona(name) for name in self.personas]


def gen_synthetic(n_users: int,
                  samples_per_user: int,
                  ambiguous_fraction: float,
                  n_classes: int,
                  vocab: Vocabulary,
                  seed: int,
                  personas: Optional[List[Persona]] = None,
                  label_skew: float = 0.0,
                  min_len: int = 10,
                  max_len: int = 30) -> Tuple[List[Sample], List[UserProfile]]:
    """Heterogeneous per-user sentiment data.

    Unambiguous samples carry one cue word of their class, so their label follows from content
    alone. Ambiguous samples carry the shared phrase and take their label from the writer's
    persona, which only a user-aware model can recover.
    """
    assert(isinstance(n_users, int))
    assert(isinstance(samples_per_user, int))
    assert(isinstance(n_classes, int))
    assert(isinstance(vocab, Vocabulary))
    assert(isinstance(seed, int))

    if n_users < 2:
        raise ValueError(f"At least two users are needed, got {n_users}")
    if n_classes < 2:
        raise ValueError(f"Personas need at least two classes to disagree, got n_classes={n_classes}")
    if not 0.0 <= ambiguous_fraction <= 1.0:
        raise ValueError(f"ambiguous_fraction must lie in [0, 1], got {ambiguous_fraction}")
    if not 0.0 <= label_skew <= 1.0:
        raise ValueError(f"label_skew must lie in [0, 1], got {label_skew}")
    if samples_per_user < 1:
        raise ValueError(f"samples_per_user must be positive, got {samples_per_user}")
    if not len(AMBIGUOUS_PHRASE) < min_len <= max_len:
        raise ValueError(f"Content lengths [{min_len}, {max_len}] must exceed the ambiguous phrase")

    pool = personas or default_personas(n_classes)

    words = FILLER_WORDS + AMBIGUOUS_PHRASE + [cue for label in range(n_classes) for cue in class_cues(label, n_classes)]
    missing = [word for word in words if word not in vocab.token_to_id]
    if missing:
        raise ValueError(f"Vocabulary lacks generator words: {missing[:5]}")

    rng = np.random.default_rng(seed)
    n_ambiguous = int(round(ambiguous_fraction * samples_per_user))

    samples = []
    profiles = []
    for index, user in enumerate(user_names(n_users)):
        persona = pool[index % len(pool)]
        leaning = persona.ambiguous_label(n_classes)
        ambiguous_slots = set(rng.permutation(samples_per_user)[:n_ambiguous].tolist())

        for slot in range(samples_per_user):
            length = int(rng.integers(min_len, max_len + 1))

            if slot in ambiguous_slots:
                content = [FILLER_WORDS[i] for i in rng.integers(0, len(FILLER_WORDS), size=length - len(AMBIGUOUS_PHRASE))]
                position = int(rng.integers(0, len(content) + 1))
                content = content[:position] + AMBIGUOUS_PHRASE + content[position:]
                label = leaning
            else:
                if rng.random() < label_skew:
                    label = leaning
                else:
                    label = int(rng.integers(0, n_classes))
                cues = class_cues(label, n_classes)
                content = [FILLER_WORDS[i] for i in rng.integers(0, len(FILLER_WORDS), size=length - 1)]
                position = int(rng.integers(0, len(content) + 1))
                content = content[:position] + [cues[int(rng.integers(0, len(cues)))]] + content[position:]

            samples.append(Sample(user=user,
                                  text=[vocab.token_to_id[word] for word in content],
                                  label=label,
                                  ambiguous=slot in ambiguous_slots))

        profiles.append(UserProfile(user=user, persona=persona, n_samples=samples_per_user))

    logging.getLogger().info(f"Generated {len(samples)} samples for {n_users} users "
                             f"({n_ambiguous} ambiguous per user, personas {[p.value for p in pool]})")

    return samples, profiles


def _group_by_user(samples: List[Sample]) -> Dict[str, List[Sample]]:
    groups = OrderedDict()
    for sample in samples:
        groups.setdefault(sample.user, []).append(sample)
    return groups


def skew_filter(samples: List[Sample], threshold: float) -> List[Sample]:
    assert(isinstance(samples, list))
    assert(isinstance(threshold, (int, float)) and not isinstance(threshold, bool))
    threshold = float(threshold)

    if not 0.5 < threshold <= 1.0:
        raise ValueError(f"Skew threshold must lie in (0.5, 1], got {threshold}")
    if any(sample.label not in (0, 1) for sample in samples):
        raise ValueError("Skew filtering needs binary labels")

    kept = set()
    for user, group in _group_by_user(samples).items():
        counts = Counter(sample.label for sample in group)
        if max(counts.values()) / len(group) >= threshold:
            kept.add(user)

    logging.getLogger().debug(f"Skew filter at {threshold} kept {len(kept)} users")

    return [sample for sample in samples if sample.user in kept]


def split_per_user(samples: List[Sample], ratios: Tuple[float, float, float], seed: int) -> SplitDataset:
    assert(isinstance(samples, list))
    assert(isinstance(seed, int))
    assert(len(ratios) == 3)

    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"Split ratios must sum to 1, got {ratios}")

    train, val, test = [], [], []
    for user, group in _group_by_user(samples).items():
        order = derive_rng(seed, "split", user).permutation(len(group))
        shuffled = [group[i] for i in order]

        if len(shuffled) >= 3:
            n_val = max(1, math.floor(ratios[1] * len(shuffled) + 1e-9))
            n_test = max(1, math.floor(ratios[2] * len(shuffled) + 1e-9))
        else:
            n_val, n_test = 0, 0

        test += shuffled[:n_test]
        val += shuffled[n_test:n_test + n_val]
        train += shuffled[n_test + n_val:]

    return SplitDataset(train=train, val=val, test=test)


def few_shot_users(samples: List[Sample], max_samples: int = 50) -> Set[str]:
    """Users with fewer than `max_samples` samples, the reporting subset for few-shot comparisons."""
    return {user for user, group in _group_by_user(samples).items() if len(group) < max_samples}


def save_jsonl(path: str, samples: List[Sample], vocab: Vocabulary):
    assert(isinstance(path, str))
    assert(isinstance(samples, list))

    with open(path, 'w', encoding='utf-8') as file:
        for sample in samples:
            file.write(json.dumps({"user": sample.user,
                                   "text": decode(vocab, sample.text),
                                   "label": sample.label,
                                   "ambiguous": sample.ambiguous}, ensure_ascii=False) + '\n')


def load_jsonl(path: str, vocab: Vocabulary) -> List[Sample]:
    assert(isinstance(path, str))

    samples = []
    with open(path, 'r', encoding='utf-8') as file:
        for number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                user, text, label = record["user"], record["text"], record["label"]
                ambiguous = record.get("ambiguous", False)
                if not isinstance(user, str) or not isinstance(text, str) or \
                        not isinstance(label, int) or isinstance(label, bool):
                    raise TypeError("fields have the wrong types")
                if not isinstance(ambiguous, bool):
                    raise TypeError(f"'ambiguous' must be a JSON boolean, got {ambiguous!r}")
                samples.append(Sample(user=user,
                                      text=encode(vocab, text),
                                      label=label,
                                      ambiguous=ambiguous))
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"Malformed sample at {path}:{number}: {e!r}")

    return samples


def save_profiles(path: str, profiles: List[UserProfile]):
    with open(path, 'w', encoding='utf-8') as file:
        for profile in profiles:
            file.write(json.dumps({"user": profile.user,
                                   "persona": profile.persona.value,
                                   "n_samples": profile.n_samples}) + '\n')


def synthesize(config: DataConfig, seed: int) -> Tuple[Vocabulary, List[Sample], List[UserProfile]]:
    """Vocabulary, samples and profiles for one seeded synthetic experiment, skew filter applied."""
    assert(isinstance(config, DataConfig))
    assert(isinstance(seed, int))

    vocab = build_vocab(lexicon_corpus(config.n_classes, user_names(config.n_users)),
                        max_size=config.vocab_size,
                        extra_symbol_budget=config.extra_symbol_budget)

    samples, profiles = gen_synthetic(n_users=config.n_users,
                                      samples_per_user=config.samples_per_user,
                                      ambiguous_fraction=config.ambiguous_fraction,
                                      n_classes=config.n_classes,
                                      vocab=vocab,
                                      seed=seed,
                                      personas=config.persona_list(),
                                      label_skew=config.label_skew,
                                      min_len=config.min_len,
                                      max_len=config.max_len)

    if config.skew_threshold is not None:
        samples = skew_filter(samples, config.skew_threshold)
        kept = {sample.user for sample in samples}
        profiles = [profile for profile in profiles if profile.user in kept]

    return vocab, samples, profiles
