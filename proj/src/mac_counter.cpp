#include "cll/mac_counter.hpp"

namespace cll {
namespace {
thread_local MacCounter* active_counter = nullptr;
}

void MacCounter::add(std::string_view category, std::uint64_t macs) {
  total_ += macs;
  auto it = by_category_.find(category);
  if (it == by_category_.end()) {
    by_category_.emplace(std::string(category), macs);
  } else {
    it->second += macs;
  }
}

std::uint64_t MacCounter::category(std::string_view name) const {
  auto it = by_category_.find(name);
  return it == by_category_.end() ? 0 : it->second;
}

void MacCounter::reset() {
  total_ = 0;
  by_category_.clear();
}

MacScope::MacScope(MacCounter& counter) : previous_(active_counter) { active_counter = &counter; }

MacScope::~MacScope() { active_counter = previous_; }

void count_macs(std::string_view category, std::uint64_t macs) {
  if (active_counter != nullptr) active_counter->add(category, macs);
}

}  // namespace cll
