#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <stop_token>

namespace tpx {

/// Durations and timestamps are integral microseconds throughout the runtime.
using Micros = std::int64_t;

enum class ClockMode { Virtual, Real };

/// Time service shared by the decoder, the scheduler and the timeline.
///
/// In virtual mode `sleep_for` is an instantaneous logical advance, so overlap
/// between decoding and tool work becomes exact and reproducible. In real mode
/// it is an ordinary sleep against the steady clock, measured from construction.
class Clock {
 public:
  virtual ~Clock() = default;

  virtual Micros now() const = 0;
  virtual void sleep_for(Micros us) = 0;
  /// Moves time forward to `t` if it lies in the future (virtual) or sleeps
  /// until it (real). Never moves time backwards.
  virtual void advance_to(Micros t) = 0;
  virtual ClockMode mode() const = 0;

  bool is_virtual() const { return mode() == ClockMode::Virtual; }
};

class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(Micros start = 0) : now_(start) {}

  Micros now() const override {
    std::lock_guard lock(mutex_);
    return now_;
  }
  void sleep_for(Micros us) override {
    std::lock_guard lock(mutex_);
    if (us > 0) now_ += us;
  }
  void advance_to(Micros t) override {
    std::lock_guard lock(mutex_);
    if (t > now_) now_ = t;
  }
  ClockMode mode() const override { return ClockMode::Virtual; }

 private:
  mutable std::mutex mutex_;
  Micros now_;
};

class RealClock final : public Clock {
 public:
  RealClock() : origin_(std::chrono::steady_clock::now()) {}

  Micros now() const override {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now() - origin_)
        .count();
  }
  void sleep_for(Micros us) override;
  void advance_to(Micros t) override { sleep_for(t - now()); }
  ClockMode mode() const override { return ClockMode::Real; }

 private:
  std::chrono::steady_clock::time_point origin_;
};

/// Sleeps for `us` real microseconds unless `stop` is requested first.
/// Returns false when interrupted.
bool interruptible_sleep(Micros us, std::stop_token stop);

/// Wall-clock stopwatch used for overhead accounting.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  Micros elapsed_us() const {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }
  std::int64_t elapsed_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace tpx
