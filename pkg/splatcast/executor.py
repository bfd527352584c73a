# Copyright 2026-present The splatcast authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Shared worker pool for tile rendering and frame-level evaluation.

numpy releases the GIL inside its kernels, so threads are enough to keep
several cores busy on per-tile work. Results always come back in submission
order so that callers can reduce them in a fixed order.
"""
import asyncio
import contextvars
import functools
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")

if "SPLATCAST_MAX_WORKERS" in os.environ:
    max_workers = int(os.environ["SPLATCAST_MAX_WORKERS"])
else:
    max_workers = os.cpu_count() or 1

_EXECUTOR = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="splatcast")


def _reset_global_executor() -> None:
    """Re-initialize the global ThreadPoolExecutor"""
    global _EXECUTOR  # noqa: PLW0603
    _EXECUTOR = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="splatcast")


if hasattr(os, "register_at_fork"):
    # A forked child inherits the pool object but none of its threads.
    os.register_at_fork(after_in_child=_reset_global_executor)


def effective_threads(threads: Optional[int]) -> int:
    """Clamp a requested thread count to the pool size; None means the pool size."""
    if threads is None:
        return max_workers
    return max(1, min(int(threads), max_workers))


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Apply `fn` to every item, possibly concurrently, returning results in
    input order.

    :Parameters:
      - `fn`: a function of one argument; must not mutate shared state
      - `items`: the work items
      - `threads` (optional): maximum concurrency; 1 runs inline on the
        calling thread
    """
    work = list(items)
    n_threads = effective_threads(threads)
    if n_threads <= 1 or len(work) <= 1:
        return [fn(item) for item in work]

    results: List[Any] = [None] * len(work)
    # At most n_threads in flight; the shared pool may be larger.
    for start in range(0, len(work), n_threads):
        wave = work[start : start + n_threads]
        futures = [_EXECUTOR.submit(fn, item) for item in wave]
        for offset, future in enumerate(futures):
            results[start + offset] = future.result()
    return results


def run_on_executor(
    loop: asyncio.AbstractEventLoop, fn: Callable[..., R], *args: Any, **kwargs: Any
) -> "asyncio.Future[R]":
    """Run a blocking function on the shared pool and return an asyncio Future."""
    context = contextvars.copy_context()
    fn = functools.partial(context.run, fn)
    return loop.run_in_executor(_EXECUTOR, functools.partial(fn, *args, **kwargs))
