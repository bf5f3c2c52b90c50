#include "xfield/parallel.hpp"

#include <algorithm>
#include <atomic>

namespace xfield {

namespace {
std::atomic<int>& threads() {
  static std::atomic<int> n{std::max(1, static_cast<int>(std::thread::hardware_concurrency()))};
  return n;
}
}  // namespace

int thread_count() { return threads().load(std::memory_order_relaxed); }

void set_thread_count(int n) { threads().store(std::max(1, n), std::memory_order_relaxed); }

}  // namespace xfield
