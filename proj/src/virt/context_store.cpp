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

#include "secpart/virt/context_store.hpp"

#include <fmt/format.h>

namespace secpart::virt {

DomainRecord& ContextStore::set(DomainId id, const DomainContext& ctx) {
  if (auto it = index_.find(id); it != index_.end()) {
    it->second->context = ctx;
    return *it->second;
  }
  list_.push_back(DomainRecord{id, fmt::format("domain{}", id.value), {}, ctx, std::nullopt});
  index_.emplace(id, std::prev(list_.end()));
  return list_.back();
}

DomainRecord& ContextStore::set(DomainId id, const DomainContext& ctx, std::string name, std::string policy_domain) {
  auto& r = set(id, ctx);
  r.name = std::move(name);
  r.policy_domain = std::move(policy_domain);
  return r;
}

DomainRecord* ContextStore::find(DomainId id) {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &*it->second;
}

const DomainRecord* ContextStore::find(DomainId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &*it->second;
}

DomainRecord& ContextStore::at(DomainId id) {
  if (auto* r = find(id)) return *r;
  throw Error(Errc::UnknownDomain, fmt::format("domain {}", id.value));
}

const DomainRecord& ContextStore::at(DomainId id) const {
  if (const auto* r = find(id)) return *r;
  throw Error(Errc::UnknownDomain, fmt::format("domain {}", id.value));
}

const DomainRecord* ContextStore::find_by_name(const std::string& name) const {
  for (const auto& r : list_)
    if (r.name == name) return &r;
  return nullptr;
}

bool ContextStore::erase(DomainId id) {
  auto it = index_.find(id);
  if (it == index_.end()) return false;
  list_.erase(it->second);
  index_.erase(it);
  return true;
}

std::vector<DomainId> ContextStore::ids() const {
  std::vector<DomainId> out;
  for (const auto& r : list_) out.push_back(r.id);
  return out;
}

bool ContextStore::consistent() const {
  if (list_.size() != index_.size()) return false;
  for (auto it = list_.begin(); it != list_.end(); ++it) {
    auto found = index_.find(it->id);
    if (found == index_.end() || found->second != it) return false;
  }
  return true;
}

}  // namespace secpart::virt
