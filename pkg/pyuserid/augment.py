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

from enum import Enum
from pprint import pformat
from typing import List, Optional

from pyuserid.identifiers import UserIdentifier
from pyuserid.tokenizer import CLS_ID, TokenSeq


class Placement(Enum):
    PREFIX = "Prefix"
    BOTH = "Both"

    @property
    def copies(self) -> int:
        return 2 if self == Placement.BOTH else 1


class Sample:
    def __init__(self, user: str, text: TokenSeq, label: int, ambiguous: bool = False):
        assert(isinstance(user, str))
        assert(isinstance(text, list))
        assert(isinstance(label, int))
        assert(isinstance(ambiguous, bool))

        self.user = user
        self.text = text
        self.label = label
        self.ambiguous = ambiguous

    def __eq__(self, other):
        assert(isinstance(other, Sample))
        return self.user == other.user and \
               self.text == other.text and \
               self.label == other.label and \
               self.ambiguous == other.ambiguous

    def __hash__(self):
        return hash((self.user, tuple(self.text), self.label, self.ambiguous))

    def __repr__(self):
        return pformat(vars(self))


class AugmentedSample:
    """Model input: CLS, identifier copies and the content that fit between them.

    `ident_len` is zero for un-augmented inputs (conventional training and prefix tuning).
    """

    def __init__(self, user: str, ids: TokenSeq, label: int, content_kept: int,
                 ident_len: int, placement: Optional[Placement], ambiguous: bool = False):
        assert(isinstance(user, str))
        assert(isinstance(ids, list))
        assert(isinstance(label, int))
        assert(isinstance(content_kept, int))
        assert(isinstance(ident_len, int))
        assert(isinstance(placement, Placement) or placement is None)
        assert(isinstance(ambiguous, bool))

        self.user = user
        self.ids = ids
        self.label = label
        self.content_kept = content_kept
        self.ident_len = ident_len
        self.placement = placement
        self.ambiguous = ambiguous

    def identifier_positions(self) -> List[int]:
        if self.ident_len == 0:
            return []

        positions = list(range(1, 1 + self.ident_len))
        if self.placement == Placement.BOTH:
            positions += list(range(len(self.ids) - self.ident_len, len(self.ids)))
        return positions

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        assert(isinstance(other, AugmentedSample))
        return self.user == other.user and \
               self.ids == other.ids and \
               self.label == other.label and \
               self.content_kept == other.content_kept and \
               self.ident_len == other.ident_len and \
               self.placement == other.placement

    def __repr__(self):
        return pformat(vars(self))


def content_budget(max_seq_len: int, ident_len: int, placement: Placement) -> int:
    assert(isinstance(max_seq_len, int))
    assert(isinstance(ident_len, int))
    assert(isinstance(placement, Placement))

    return max(0, max_seq_len - 1 - placement.copies * ident_len)


def augment(sample: Sample, ident: UserIdentifier, placement: Placement, max_seq_len: int) -> AugmentedSample:
    assert(isinstance(sample, Sample))
    assert(isinstance(ident, UserIdentifier))
    assert(isinstance(placement, Placement))
    assert(isinstance(max_seq_len, int))

    required = 1 + placement.copies * len(ident)
    if required > max_seq_len:
        raise ValueError(f"Identifier of {len(ident)} tokens placed {placement.value} needs {required} positions, "
                         f"more than the maximum sequence length {max_seq_len}")

    # Content is cut from the tail, identifier tokens are never truncated
    content = sample.text[:content_budget(max_seq_len, len(ident), placement)]

    ids = [CLS_ID] + list(ident.ids) + content
    if placement == Placement.BOTH:
        ids += list(ident.ids)

    return AugmentedSample(user=sample.user,
                           ids=ids,
                           label=sample.label,
                           content_kept=len(content),
                           ident_len=len(ident),
                           placement=placement,
                           ambiguous=sample.ambiguous)


def frame(sample: Sample, max_seq_len: int, reserved: int = 0) -> AugmentedSample:
    """[CLS, x'] without identifier, keeping `reserved` positions free for prefix vectors."""
    assert(isinstance(sample, Sample))
    assert(isinstance(max_seq_len, int))
    assert(isinstance(reserved, int))

    if 1 + reserved > max_seq_len:
        raise ValueError(f"{reserved} reserved positions do not fit the maximum sequence length {max_seq_len}")

    content = sample.text[:max_seq_len - 1 - reserved]
    return AugmentedSample(user=sample.user,
                           ids=[CLS_ID] + content,
                           label=sample.label,
                           content_kept=len(content),
                           ident_len=0,
                           placement=None,
                           ambiguous=sample.ambiguous)
