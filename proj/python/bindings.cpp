/*
 * Copyright 2026 The secpart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "secpart/bmu/bmu.hpp"
#include "secpart/harness/suite.hpp"
#include "secpart/ipc/buddy.hpp"

namespace py = pybind11;
using namespace secpart;

namespace {

py::object as_dict(const harness::RunReport& r) {
  auto report = py::module_::import("json").attr("loads")(r.to_json());
  report["trace"] = py::cast(r.trace);
  return report;
}

harness::RunOptions options(std::optional<std::uint64_t> seed, std::uint64_t max_steps) {
  harness::RunOptions o;
  o.seed = seed;
  o.max_steps = max_steps;
  return o;
}

AccessKind kind_of(const std::string& k) {
  if (k == "read") return AccessKind::Read;
  if (k == "write") return AccessKind::Write;
  if (k == "fetch") return AccessKind::Fetch;
  if (k == "swap") return AccessKind::Swap;
  throw Error(Errc::Validation, "access kind must be read, write, fetch or swap");
}

}  // namespace

PYBIND11_MODULE(_secpart, m) {
  m.doc() = "secpart simulator bindings";

  // Messages carry the error code name first, e.g. "ParseError: ...".
  py::register_exception<Error>(m, "SecpartError");

  const std::uint64_t default_budget = harness::RunOptions{}.max_steps;

  m.def(
      "run_file",
      [](const std::string& path, std::optional<std::uint64_t> seed, std::uint64_t max_steps) {
        return as_dict(harness::run_scenario(harness::load_scenario(path), options(seed, max_steps)));
      },
      py::arg("path"), py::arg("seed") = py::none(), py::arg("max_steps") = default_budget);
  m.def(
      "run_text",
      [](const std::string& text, std::optional<std::uint64_t> seed, std::uint64_t max_steps) {
        return as_dict(harness::run_scenario(harness::parse_scenario(text), options(seed, max_steps)));
      },
      py::arg("text"), py::arg("seed") = py::none(), py::arg("max_steps") = default_budget);
  m.def(
      "attack_suite", [](std::uint64_t seed) { return as_dict(harness::attack_suite(seed).summary); },
      py::arg("seed") = 0);
  m.def(
      "bench", [](const std::string& kind, std::uint64_t seed) { return as_dict(harness::bench(kind, seed)); },
      py::arg("kind"), py::arg("seed") = 0);
  m.attr("bench_kinds") = harness::kBenchKinds;

  m.def(
      "example_policy_blocks",
      [](std::uint32_t proc, const std::string& kind, Addr addr) {
        static const auto matrix = [] {
          const auto ex = bmu::four_domain_example();
          return bmu::compile_policy(ex.policy, ex.assignment);
        }();
        return matrix.check(machine::BusAccess::make(ProcessorId{proc}, kind_of(kind), addr)) == bmu::Decision::Blocked;
      },
      py::arg("proc"), py::arg("kind"), py::arg("addr"),
      "Whether the four-domain example matrix blocks this access.");

  py::class_<ipc::BuddyAllocator>(m, "BuddyAllocator")
      .def(py::init<std::uint32_t, std::uint32_t>(), py::arg("capacity"), py::arg("min_block") = 32)
      .def("alloc", &ipc::BuddyAllocator::alloc, py::arg("size"))
      .def("free", &ipc::BuddyAllocator::free, py::arg("offset"))
      .def("live_size", &ipc::BuddyAllocator::live_size)
      .def("block_size", &ipc::BuddyAllocator::block_size)
      .def_property_readonly("capacity", &ipc::BuddyAllocator::capacity)
      .def_property_readonly("free_bytes", &ipc::BuddyAllocator::free_bytes)
      .def_property_readonly("live", &ipc::BuddyAllocator::live)
      .def("pristine", &ipc::BuddyAllocator::pristine);
}
