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

import itertools
import json
import logging
from collections import Counter
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List

PAD = "<pad>"
UNK = "<unk>"
CLS = "<cls>"
SPECIALS = [PAD, UNK, CLS]
PAD_ID, UNK_ID, CLS_ID = range(len(SPECIALS))

DIGITS = [str(digit) for digit in range(10)]

# No quotes or backslash, so symbol tokens survive JSON and shell quoting untouched
SYMBOL_ALPHABET = "!#$%&()*+,-./:;<=>?@[]^_{|}~"

TokenSeq = List[int]


class SubsetKind(Enum):
    DIGITS = "digits"
    NON_ALNUM = "non_alnum"
    ALL = "all"


class Vocabulary:
    def __init__(self, tokens: List[str], specials: Dict[str, int], subsets: Dict[SubsetKind, FrozenSet[int]]):
        assert(isinstance(tokens, list))
        assert(isinstance(specials, dict))
        assert(isinstance(subsets, dict))

        self.tokens = tokens
        self.token_to_id = {token: index for index, token in enumerate(tokens)}
        self.specials = specials
        self.subsets = subsets

        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("Vocabulary tokens are not unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.specials[PAD]

    @property
    def unk_id(self) -> int:
        return self.specials[UNK]

    @property
    def cls_id(self) -> int:
        return self.specials[CLS]

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        assert(isinstance(other, Vocabulary))
        return self.tokens == other.tokens and \
               self.specials == other.specials and \
               self.subsets == other.subsets

    def __repr__(self):
        return f"Vocabulary(size={self.size}, " \
               f"digits={len(self.subsets[SubsetKind.DIGITS])}, " \
               f"non_alnum={len(self.subsets[SubsetKind.NON_ALNUM])})"


def symbol_tokens(count: int) -> List[str]:
    """Deterministic non-alphanumeric tokens: pairs over the alphabet, then triples, ..."""
    assert(isinstance(count, int))

    symbols = []
    for length in itertools.count(2):
        for chars in itertools.product(SYMBOL_ALPHABET, repeat=length):
            if len(symbols) == count:
                return symbols
            symbols.append(''.join(chars))


def build_vocab(corpus: Iterable[str], max_size: int, extra_symbol_budget: int) -> Vocabulary:
    assert(isinstance(max_size, int))
    assert(isinstance(extra_symbol_budget, int))
    assert(extra_symbol_budget >= 0)

    mandatory = len(SPECIALS) + len(DIGITS)
    if max_size < mandatory:
        raise ValueError(f"max_size {max_size} cannot hold the {mandatory} mandatory tokens")

    counts = Counter()
    lines = 0
    for text in corpus:
        lines += 1
        counts.update(text.lower().split())

    if lines == 0:
        raise ValueError("Cannot build a vocabulary from an empty corpus")

    symbols = symbol_tokens(min(extra_symbol_budget, max_size - mandatory))

    reserved = set(SPECIALS) | set(DIGITS) | set(symbols)
    words = sorted((word for word in counts if word not in reserved), key=lambda word: (-counts[word], word))
    words = words[:max_size - mandatory - len(symbols)]

    tokens = SPECIALS + DIGITS + symbols + words
    specials = {token: index for index, token in enumerate(SPECIALS)}

    digit_ids = frozenset(range(len(SPECIALS), len(SPECIALS) + len(DIGITS)))
    symbol_ids = frozenset(range(mandatory, mandatory + len(symbols)))
    all_ids = frozenset(range(len(SPECIALS), len(tokens)))

    logging.getLogger().debug(f"Built vocabulary of {len(tokens)} tokens ({len(symbols)} symbols, "
                              f"{len(words)} of {len(counts)} corpus words)")

    return Vocabulary(tokens=tokens,
                      specials=specials,
                      subsets={SubsetKind.DIGITS: digit_ids,
                               SubsetKind.NON_ALNUM: symbol_ids,
                               SubsetKind.ALL: all_ids})


def encode(vocab: Vocabulary, text: str) -> TokenSeq:
    assert(isinstance(vocab, Vocabulary))
    assert(isinstance(text, str))

    return [vocab.token_to_id.get(word, vocab.unk_id) for word in text.lower().split()]


def decode(vocab: Vocabulary, seq: TokenSeq) -> str:
    assert(isinstance(vocab, Vocabulary))

    for token_id in seq:
        if not 0 <= token_id < vocab.size:
            raise ValueError(f"Token id {token_id} is outside the vocabulary of size {vocab.size}")

    return ' '.join(vocab.tokens[token_id] for token_id in seq)


def subset(vocab: Vocabulary, kind: SubsetKind) -> FrozenSet[int]:
    assert(isinstance(vocab, Vocabulary))
    assert(isinstance(kind, SubsetKind))

    return vocab.subsets[kind]


def save_vocab(path: str, vocab: Vocabulary):
    assert(isinstance(path, str))

    with open(path, 'w', encoding='utf-8') as file:
        json.dump({"tokens": vocab.tokens,
                   "specials": vocab.specials,
                   "subsets": {kind.value: sorted(ids) for kind, ids in vocab.subsets.items()}},
                  file, ensure_ascii=False)


def load_vocab(path: str) -> Vocabulary:
    assert(isinstance(path, str))

    with open(path, 'r', encoding='utf-8') as file:
        data = json.load(file)

    return Vocabulary(tokens=data["tokens"],
                      specials=data["specials"],
                      subsets={SubsetKind(kind): frozenset(ids) for kind, ids in data["subsets"].items()})
