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
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Callable, List


class PersonalizationApi:
    """
    Define a common abstract API for personalization methods
    """

    @property
    def name(self) -> str:
        raise NotImplementedError()

    def fit(self, dataset):
        raise NotImplementedError()

    def evaluate(self, samples, users=None):
        raise NotImplementedError()

    def parameters(self):
        raise NotImplementedError()


class AsyncApi:
    """
    Wrap blocking calls into Asyncio coroutines using a call to
        asyncio.loop.run_in_executor()
    """

    def __init__(self, loop, executor, api=None):
        self.loop = loop
        self.executor = executor
        self.api = api

    async def _call(self, function, *args, **kwargs):
        func_call = partial(function, *args, **kwargs)
        return await self.loop.run_in_executor(self.executor, func_call)

    async def fit(self, *args, **kwargs):
        return await self._call(self.api.fit, *args, **kwargs)

    async def evaluate(self, *args, **kwargs):
        return await self._call(self.api.evaluate, *args, **kwargs)

    async def gather(self, calls: List[Callable]) -> list:
        """Runs zero-argument calls on the executor, results in submission order."""
        return list(await asyncio.gather(*[self._call(call) for call in calls]))


def dispatch(calls: List[Callable], workers: int = 1) -> list:
    """Runs independent calls on a pool of `workers` threads and returns their results in order."""
    assert(isinstance(workers, int))
    assert(workers >= 1)

    if workers == 1:
        return [call() for call in calls]

    loop = asyncio.new_event_loop()
    try:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return loop.run_until_complete(AsyncApi(loop, executor).gather(calls))
    finally:
        loop.close()
