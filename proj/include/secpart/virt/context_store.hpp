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

#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "secpart/common.hpp"
#include "secpart/machine/context.hpp"

namespace secpart::virt {

using machine::DomainContext;

struct DomainRecord {
  DomainId id;
  std::string name;
  std::string policy_domain;  // column of the DomainPolicy this domain runs under
  DomainContext context;
  std::optional<ProcessorId> running_on;

  bool dormant() const { return !running_on.has_value(); }
};

/// Master-private context table: a doubly-linked list of records plus a hash
/// index keyed by domain id.
class ContextStore {
 public:
  /// Inserts or replaces. A new record starts Dormant; a replaced record
  /// keeps its running state.
  DomainRecord& set(DomainId id, const DomainContext& ctx);
  DomainRecord& set(DomainId id, const DomainContext& ctx, std::string name, std::string policy_domain);

  DomainRecord* find(DomainId id);
  const DomainRecord* find(DomainId id) const;
  /// Throws Error(Errc::UnknownDomain).
  DomainRecord& at(DomainId id);
  const DomainRecord& at(DomainId id) const;
  const DomainRecord* find_by_name(const std::string& name) const;
  bool erase(DomainId id);

  std::size_t size() const { return list_.size(); }
  const std::list<DomainRecord>& records() const { return list_; }
  std::vector<DomainId> ids() const;
  /// List membership and hash index agree.
  bool consistent() const;

 private:
  std::list<DomainRecord> list_;
  std::unordered_map<DomainId, std::list<DomainRecord>::iterator> index_;
};

}  // namespace secpart::virt
