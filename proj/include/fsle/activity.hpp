#pragma once

#include <atomic>

namespace fsle {

// Process-wide count of in-flight engine work (evaluation workers, forward
// passes started outside a benchmark). The benchmark harness samples it to
// flag latency measurements that shared the machine with other engine work.
class EngineActivity {
 public:
  static int active() noexcept { return counter().load(std::memory_order_acquire); }

  class Scope {
   public:
    Scope() noexcept { counter().fetch_add(1, std::memory_order_acq_rel); }
    ~Scope() { counter().fetch_sub(1, std::memory_order_acq_rel); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

 private:
  static std::atomic<int>& counter() noexcept {
    static std::atomic<int> value{0};
    return value;
  }
};

}  // namespace fsle
