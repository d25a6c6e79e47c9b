#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <vector>

namespace lrq::memory {

// Per-thread byte accounting for every tensor buffer. Tensors are confined to
// one thread, so thread-local counters need no synchronization.
struct Counters {
  std::size_t current = 0;
  std::size_t peak = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void reset_peak() { counters().peak = counters().current; }

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    auto& c = counters();
    c.current += n * sizeof(T);
    c.peak = std::max(c.peak, c.current);
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    auto& c = counters();
    c.current -= std::min(c.current, n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

/// Measures the peak number of tensor bytes allocated while `fn` runs, on top
/// of whatever was live when the scope opened.
class PeakScope {
 public:
  PeakScope() : baseline_(counters().current), saved_peak_(counters().peak) {
    counters().peak = baseline_;
  }
  ~PeakScope() { counters().peak = std::max(saved_peak_, counters().peak); }
  PeakScope(const PeakScope&) = delete;
  PeakScope& operator=(const PeakScope&) = delete;

  std::size_t peak_bytes() const { return counters().peak - baseline_; }

 private:
  std::size_t baseline_;
  std::size_t saved_peak_;
};

}  // namespace lrq::memory

namespace lrq {
using Buffer = std::vector<double, memory::TrackingAllocator<double>>;
}
