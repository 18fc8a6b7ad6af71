#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace cll {

// Multiply-accumulate tally. Kernels report into whichever counter is active
// on the calling thread; with no active counter reporting is a no-op.
class MacCounter {
 public:
  void add(std::string_view category, std::uint64_t macs);
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t category(std::string_view name) const;
  const std::map<std::string, std::uint64_t, std::less<>>& categories() const noexcept {
    return by_category_;
  }
  void reset();

 private:
  std::uint64_t total_ = 0;
  std::map<std::string, std::uint64_t, std::less<>> by_category_;
};

// Installs a counter as the active one for the current thread until destroyed.
// Scopes nest; the innermost receives the counts.
class MacScope {
 public:
  explicit MacScope(MacCounter& counter);
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCounter* previous_;
};

void count_macs(std::string_view category, std::uint64_t macs);

}  // namespace cll
