#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include "decoyweaver/action.hpp"

namespace decoyweaver {

// Time source for decoys. Keyed by source address so a simulator can give
// every agent its own virtual timeline.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimestampMs now(std::string_view source) const = 0;
};

class SystemClock final : public Clock {
 public:
  TimestampMs now(std::string_view) const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
};

class ManualClock final : public Clock {
 public:
  explicit ManualClock(TimestampMs base = 0) : base_(base) {}

  TimestampMs now(std::string_view source) const override {
    std::lock_guard lock(mu_);
    auto it = per_source_.find(std::string(source));
    return it == per_source_.end() ? base_ : it->second;
  }

  void set(std::string_view source, TimestampMs ts) {
    std::lock_guard lock(mu_);
    per_source_[std::string(source)] = ts;
  }

  void set_base(TimestampMs ts) {
    std::lock_guard lock(mu_);
    base_ = ts;
  }

 private:
  mutable std::mutex mu_;
  TimestampMs base_;
  std::map<std::string, TimestampMs> per_source_;
};

}  // namespace decoyweaver
