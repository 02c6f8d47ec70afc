#include "tpx/clock.hpp"

#include <condition_variable>
#include <thread>

namespace tpx {

void RealClock::sleep_for(Micros us) {
  if (us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));
}

bool interruptible_sleep(Micros us, std::stop_token stop) {
  if (us <= 0) return !stop.stop_requested();
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  return !cv.wait_for(lock, stop, std::chrono::microseconds(us), [] { return false; });
}

}  // namespace tpx
