#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <vector>

namespace edgelite {

struct MemorySnapshot {
  std::uint64_t live_bytes = 0;
  std::uint64_t peak_bytes = 0;
  std::uint64_t allocated_bytes = 0;  // cumulative
  std::uint64_t freed_bytes = 0;      // cumulative
  std::uint64_t allocations = 0;
  std::uint64_t frees = 0;
};

/// Process-wide accounting of engine-managed buffers (tensor storage and
/// kernel scratch). Counters are always maintained; `enabled` only gates
/// whether measurements may be taken from them.
class MemoryAccounting {
 public:
  static MemoryAccounting& instance();

  void on_allocate(std::size_t bytes) noexcept;
  void on_free(std::size_t bytes) noexcept;

  MemorySnapshot snapshot() const noexcept;
  /// Restarts peak tracking from the current live total.
  void reset_peak() noexcept;

  bool enabled() const noexcept { return enabled_.load(std::memory_order_relaxed); }
  void set_enabled(bool on) noexcept { enabled_.store(on, std::memory_order_relaxed); }

 private:
  MemoryAccounting() = default;

  std::atomic<std::uint64_t> live_{0};
  std::atomic<std::uint64_t> peak_{0};
  std::atomic<std::uint64_t> allocated_{0};
  std::atomic<std::uint64_t> freed_{0};
  std::atomic<std::uint64_t> allocations_{0};
  std::atomic<std::uint64_t> frees_{0};
  std::atomic<bool> enabled_{true};
};

void* tracked_allocate(std::size_t bytes);
void tracked_free(void* ptr, std::size_t bytes) noexcept;

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    return static_cast<T*>(tracked_allocate(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept { tracked_free(p, n * sizeof(T)); }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

/// Kernel scratch storage counted against the engine's working set.
template <class T>
using ScratchVector = std::vector<T, TrackingAllocator<T>>;

}  // namespace edgelite
