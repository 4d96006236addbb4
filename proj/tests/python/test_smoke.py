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

import os
import pathlib

import pytest

import secpart

ROOT = pathlib.Path(os.environ.get("SECPART_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def test_scenario_file_report():
    rep = secpart.run_file(str(ROOT / "scenarios" / "lending.yaml"))
    assert rep["pass"]
    assert rep["step_unit"] == "simulated steps"
    assert {v["name"] for v in rep["verdicts"]} >= {"guard", "conserved"}
    assert rep["phases"]["separate"]["total"] > 0
    assert any(line.startswith("transition,") for line in rep["trace"])


def test_seed_override_keeps_verdicts():
    a = secpart.run_file(str(ROOT / "scenarios" / "uds_transfer.yaml"), seed=1)
    b = secpart.run_file(str(ROOT / "scenarios" / "uds_transfer.yaml"), seed=2)
    assert a["seed"] == 1 and b["seed"] == 2
    assert [v["pass"] for v in a["verdicts"]] == [v["pass"] for v in b["verdicts"]]


def test_parse_error_raises():
    with pytest.raises(secpart.SecpartError, match="ParseError.*line"):
        secpart.run_text("scenario: x\nplatform: [1\n")


def test_attack_suite_contained():
    rep = secpart.attack_suite(seed=3)
    assert [v["detail"] for v in rep["verdicts"]] == ["Contained"] * 4


def test_benches():
    assert set(secpart.bench_kinds) == {"ipc", "uds", "transition", "throughput"}
    ipc = secpart.bench("ipc")
    assert ipc["metrics"]["semop_remote"] > ipc["metrics"]["semop_local"]
    tp = secpart.bench("throughput")
    assert tp["throughput"]["before.base"] * 3 == tp["throughput"]["lent.base"] * 4


def test_policy_and_buddy():
    assert secpart.example_policy_blocks(3, "write", 0x200000)
    assert not secpart.example_policy_blocks(1, "read", 0x200000)
    assert not secpart.example_policy_blocks(0, "write", 0x200000)
    heap = secpart.BuddyAllocator(1024, 32)
    off = heap.alloc(100)
    assert heap.live_size(off) == 128 and off % 128 == 0
    heap.free(off)
    assert heap.pristine()
    with pytest.raises(secpart.SecpartError):
        heap.free(off)
