# Copyright 2026 The secpart Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python front end for the secpart machine simulator.

Reports are plain dicts with the same fields as ``sim --report`` plus the
CSV trace lines under ``"trace"``.
"""

from ._secpart import (
    BuddyAllocator,
    SecpartError,
    attack_suite,
    bench,
    bench_kinds,
    example_policy_blocks,
    run_file,
    run_text,
)

__all__ = [
    "BuddyAllocator",
    "SecpartError",
    "attack_suite",
    "bench",
    "bench_kinds",
    "example_policy_blocks",
    "run_file",
    "run_text",
]
