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

import hashlib
import json
import zlib

import numpy as np


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for a (seed, key...) stream.

    String keys are folded through crc32 so the stream does not depend on
    Python's per-process hash randomisation.
    """
    assert(isinstance(seed, int))

    entropy = [seed]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode('utf-8')))
        else:
            assert(isinstance(key, int))
            entropy.append(key)

    return np.random.default_rng(entropy)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def stable_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()
