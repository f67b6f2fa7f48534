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
from enum import Enum
from fractions import Fraction
from pprint import pformat
from typing import Dict, List, Optional, Tuple

import numpy as np

from pyuserid.tokenizer import SubsetKind, TokenSeq, Vocabulary, encode, subset

DEFAULT_MAX_RETRIES = 100

# Above these sizes the birthday product is evaluated in log space
EXACT_MAX_USERS = 1000
EXACT_MAX_SPACE = 2 ** 63


class Scheme(Enum):
    DEFAULT = "Default"
    NUM = "Num"
    RAND_DIG = "RandDig"
    RAND_NON = "RandNon"
    RAND_ALL = "RandAll"

    @property
    def is_random(self) -> bool:
        return self in SCHEME_SUBSETS


SCHEME_SUBSETS = {
    Scheme.RAND_DIG: SubsetKind.DIGITS,
    Scheme.RAND_NON: SubsetKind.NON_ALNUM,
    Scheme.RAND_ALL: SubsetKind.ALL
}


class UserIdentifier:
    def __init__(self, user: str, ids: TokenSeq, scheme: Scheme):
        assert(isinstance(user, str))
        assert(isinstance(ids, list))
        assert(isinstance(scheme, Scheme))

        if len(ids) == 0:
            raise ValueError(f"Identifier of user '{user}' is empty")

        self.user = user
        self.ids = ids
        self.scheme = scheme

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        assert(isinstance(other, UserIdentifier))
        return self.user == other.user and \
               self.ids == other.ids and \
               self.scheme == other.scheme

    def __hash__(self):
        return hash((self.user, tuple(self.ids), self.scheme))

    def __repr__(self):
        return pformat(vars(self))


class IdentifierAssignment:
    def __init__(self, identifiers: Dict[str, UserIdentifier], scheme: Scheme, length: int, seed: int):
        assert(isinstance(identifiers, dict))
        assert(isinstance(scheme, Scheme))
        assert(isinstance(length, int))
        assert(isinstance(seed, int))

        self.identifiers = identifiers
        self.scheme = scheme
        self.length = length
        self.seed = seed

    @property
    def users(self) -> List[str]:
        return list(self.identifiers.keys())

    def __getitem__(self, user: str) -> UserIdentifier:
        if user not in self.identifiers:
            raise ValueError(f"User '{user}' has no identifier in this assignment")
        return self.identifiers[user]

    def __contains__(self, user: str):
        return user in self.identifiers

    def __len__(self):
        return len(self.identifiers)

    def __eq__(self, other):
        assert(isinstance(other, IdentifierAssignment))
        return self.identifiers == other.identifiers and \
               self.scheme == other.scheme and \
               self.length == other.length and \
               self.seed == other.seed

    def is_unique(self) -> bool:
        sequences = [tuple(ident.ids) for ident in self.identifiers.values()]
        return len(set(sequences)) == len(sequences)

    def __repr__(self):
        return f"IdentifierAssignment(scheme={self.scheme.value}, length={self.length}, " \
               f"seed={self.seed}, users={len(self.identifiers)})"


class IdentifierSampler:
    """Draws random identifiers for one scheme, resampling duplicates when uniqueness is enforced."""

    logger = logging.getLogger()

    def __init__(self, space: List[int], length: int, seed: int, enforce: bool, max_retries: int):
        assert(isinstance(space, list))
        assert(isinstance(length, int))
        assert(isinstance(seed, int))
        assert(isinstance(enforce, bool))
        assert(isinstance(max_retries, int))

        self.space = space
        self.length = length
        self.enforce = enforce
        self.max_retries = max_retries
        self.rng = np.random.default_rng(seed)
        self.seen = set()

    def draw(self, user: str) -> TokenSeq:
        for attempt in range(self.max_retries + 1):
            positions = self.rng.integers(0, len(self.space), size=self.length)
            ids = [self.space[position] for position in positions]

            if not self.enforce or tuple(ids) not in self.seen:
                self.seen.add(tuple(ids))
                return ids

            self.logger.debug(f"Identifier of user '{user}' collided on attempt {attempt + 1}, resampling")

        raise ValueError(f"Could not draw a unique identifier for user '{user}' after {self.max_retries} retries "
                         f"from a space of {len(self.space)}^{self.length} sequences")


def assign(users: List[str],
           scheme: Scheme,
           length: int,
           vocab: Vocabulary,
           seed: int,
           usernames: Optional[Dict[str, str]] = None,
           enforce: bool = True,
           max_retries: int = DEFAULT_MAX_RETRIES) -> IdentifierAssignment:
    assert(isinstance(users, list))
    assert(isinstance(scheme, Scheme))
    assert(isinstance(length, int))
    assert(isinstance(vocab, Vocabulary))
    assert(isinstance(seed, int))

    if len(set(users)) != len(users):
        raise ValueError("User list contains duplicates")

    identifiers = {}

    if scheme == Scheme.NUM:
        # Each decimal digit is its own token, so user 12 becomes ["1", "2"]
        for index, user in enumerate(users, start=1):
            identifiers[user] = UserIdentifier(user, [vocab.token_to_id[digit] for digit in str(index)], scheme)

    elif scheme == Scheme.DEFAULT:
        if usernames is None:
            raise ValueError("The Default scheme requires usernames")
        for user in users:
            if user not in usernames:
                raise ValueError(f"Missing username for user '{user}' under the Default scheme")
            identifiers[user] = UserIdentifier(user, encode(vocab, usernames[user]), scheme)

    else:
        if length < 1:
            raise ValueError(f"Identifier length must be at least 1 for {scheme.value}, got {length}")

        space = sorted(subset(vocab, SCHEME_SUBSETS[scheme]))
        if len(space) == 0:
            raise ValueError(f"The {SCHEME_SUBSETS[scheme].value} subset of the vocabulary is empty")

        if enforce and len(space) ** length < len(users):
            raise ValueError(f"Cannot assign {len(users)} unique identifiers of length {length} "
                             f"from a space of size {len(space)} ({len(space) ** length} sequences)")

        sampler = IdentifierSampler(space, length, seed, enforce, max_retries)
        for user in users:
            identifiers[user] = UserIdentifier(user, sampler.draw(user), scheme)

    assignment = IdentifierAssignment(identifiers, scheme, length, seed)

    if enforce and not assignment.is_unique():
        raise ValueError(f"Identifiers under the {scheme.value} scheme are not unique across users")

    return assignment


def collision_probability(space_size: int, length: int, n_users: int) -> float:
    """Probability that at least two of `n_users` i.i.d. uniform identifiers coincide.

    Exact rational arithmetic for small instances, log1p accumulation otherwise.
    """
    assert(isinstance(space_size, int))
    assert(isinstance(length, int))
    assert(isinstance(n_users, int))
    assert(space_size >= 1)
    assert(length >= 1)
    assert(n_users >= 1)

    sequences = space_size ** length
    if n_users > sequences:
        return 1.0

    if n_users <= EXACT_MAX_USERS and sequences <= EXACT_MAX_SPACE:
        no_collision = Fraction(1)
        for index in range(n_users):
            no_collision *= Fraction(sequences - index, sequences)
        return float(1 - no_collision)

    inverse = 1 / sequences
    log_no_collision = float(np.sum(np.log1p(-np.arange(n_users, dtype=np.float64) * inverse)))
    return max(0.0, float(-math.expm1(log_no_collision)))


def simulate_collisions(space_size: int, length: int, n_users: int, trials: int, seed: int) -> Tuple[float, float]:
    """Monte Carlo duplicate frequency over unenforced assignments, with its standard error."""
    assert(isinstance(space_size, int))
    assert(isinstance(length, int))
    assert(isinstance(n_users, int))
    assert(isinstance(trials, int))
    assert(trials >= 1)

    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, space_size, size=(trials, n_users, length))

    collisions = 0
    for trial in tokens:
        sequences = {tuple(row) for row in trial.tolist()}
        if len(sequences) < n_users:
            collisions += 1

    frequency = collisions / trials
    return frequency, math.sqrt(frequency * (1 - frequency) / trials)


def save_assignment(path: str, assignment: IdentifierAssignment):
    assert(isinstance(path, str))
    assert(isinstance(assignment, IdentifierAssignment))

    with open(path, 'w', encoding='utf-8') as file:
        for user, ident in assignment.identifiers.items():
            file.write(json.dumps({"user": user,
                                   "scheme": ident.scheme.value,
                                   "ids": ident.ids,
                                   "length": assignment.length,
                                   "seed": assignment.seed}) + '\n')


def load_assignment(path: str) -> IdentifierAssignment:
    assert(isinstance(path, str))

    identifiers = {}
    scheme, length, seed = None, 0, 0
    with open(path, 'r', encoding='utf-8') as file:
        for number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scheme = Scheme(record["scheme"])
                length = int(record.get("length", len(record["ids"])))
                seed = int(record.get("seed", 0))
                identifiers[record["user"]] = UserIdentifier(str(record["user"]), list(record["ids"]), scheme)
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"Malformed assignment record at {path}:{number}: {e}")

    if scheme is None:
        raise ValueError(f"Assignment file {path} holds no records")

    return IdentifierAssignment(identifiers, scheme, length, seed)
