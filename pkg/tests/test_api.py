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

import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from functools import partial

import pytest

from pyuserid.api import AsyncApi, PersonalizationApi, dispatch


def slow_square(value: int, delay: float) -> int:
    time.sleep(delay)
    return value * value


class EchoApi(PersonalizationApi):
    @property
    def name(self) -> str:
        return "Echo"

    def fit(self, dataset):
        return f"fit {dataset}"

    def evaluate(self, samples, users=None):
        return len(samples)


class TestPersonalizationApi:
    def test_abstract_methods(self):
        api = PersonalizationApi()

        with pytest.raises(NotImplementedError):
            api.fit([])
        with pytest.raises(NotImplementedError):
            api.parameters()


class TestAsyncApi:
    @pytest.mark.asyncio
    async def test_gather_keeps_submission_order(self):
        # given
        loop = asyncio.get_event_loop()
        executor = ThreadPoolExecutor(max_workers=3)
        calls = [partial(slow_square, value, delay) for value, delay in [(1, 0.06), (2, 0.0), (3, 0.03)]]

        # when
        results = await AsyncApi(loop, executor).gather(calls)

        # then
        assert(results == [1, 4, 9])
        executor.shutdown()

    @pytest.mark.asyncio
    async def test_wraps_a_personalization_api(self):
        loop = asyncio.get_event_loop()
        executor = ThreadPoolExecutor(max_workers=1)
        api = AsyncApi(loop, executor, EchoApi())

        assert(await api.fit("data") == "fit data")
        assert(await api.evaluate([1, 2, 3]) == 3)
        executor.shutdown()


class TestDispatch:
    def test_sequential(self):
        assert(dispatch([partial(slow_square, value, 0.0) for value in range(5)]) == [0, 1, 4, 9, 16])

    @pytest.mark.timeout(10)
    def test_threaded_results_keep_order(self):
        calls = [partial(slow_square, value, 0.05 * (4 - value)) for value in range(5)]

        assert(dispatch(calls, workers=4) == [0, 1, 4, 9, 16])

    def test_no_calls(self):
        assert(dispatch([], workers=2) == [])

    def test_errors_propagate(self):
        def failing():
            raise ValueError("boom")

        with pytest.raises(ValueError, match="boom"):
            dispatch([failing], workers=2)
