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

"""Discover the test environment: the slow-test opt-in."""

import os
from functools import wraps
from unittest import SkipTest

# mypy: ignore-errors


def _flag(name):
    return os.environ.get(name, "").lower() in ("1", "true", "yes", "on")


class TestEnvironment:
    __test__ = False

    def __init__(self):
        self.initialized = False
        self.slow = False

    def setup(self):
        assert not self.initialized
        # Multi-minute acceptance runs only execute when asked for.
        self.slow = _flag("SPLATCAST_SLOW_TESTS")
        self.initialized = True

    def require(self, condition, msg, func=None):
        def make_wrapper(f):
            @wraps(f)
            def wrap(*args, **kwargs):
                assert self.initialized
                if condition():
                    return f(*args, **kwargs)
                raise SkipTest(msg)

            return wrap

        if func is None:

            def decorate(f):
                return make_wrapper(f)

            return decorate
        return make_wrapper(func)

    def require_slow(self, func):
        """Run a test only if SPLATCAST_SLOW_TESTS is set."""
        return self.require(lambda: self.slow, "set SPLATCAST_SLOW_TESTS=1 to run acceptance tests", func=func)


env = TestEnvironment()
env.setup()
