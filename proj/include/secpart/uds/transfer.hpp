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

#pragma once

#include <string>
#include <vector>

#include "secpart/uds/uds.hpp"

namespace secpart::uds {

/// Clients each stream `bytes` to one server in `fragment`-sized datagrams.
struct TransferSpec {
  std::uint32_t processors = 3;
  ProcessorId server{0};
  std::vector<ProcessorId> clients{ProcessorId{1}};
  std::size_t bytes = 1 << 20;
  std::size_t fragment = 4096;
  std::uint64_t seed = 0;
  std::string path = "/run/sink";
  Step budget = 200'000'000;
};

struct TransferResult {
  /// (client index, payload) in the order the server received them.
  std::vector<std::pair<std::size_t, Bytes>> observed;
  std::vector<Bytes> sent;      // per client stream
  std::vector<Bytes> received;  // per client, reassembled
  std::size_t bytes_delivered = 0;
  Step steps = 0;
  bool completed = false;
  bool proxies_ok = true;  // bookkeeping held at every step
  bool residue_free = false;
  std::vector<UdsTransfer> transfers;

  bool byte_identical() const { return completed && sent == received; }
};

TransferResult run_transfer(const TransferSpec& spec);

}  // namespace secpart::uds
