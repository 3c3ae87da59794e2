#include "edgelite/memory.hpp"

#include <cstdlib>

namespace edgelite {

namespace {
constexpr std::size_t kAlignment = 64;
}

MemoryAccounting& MemoryAccounting::instance() {
  static MemoryAccounting accounting;
  return accounting;
}

void MemoryAccounting::on_allocate(std::size_t bytes) noexcept {
  const auto now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  allocated_.fetch_add(bytes, std::memory_order_relaxed);
  allocations_.fetch_add(1, std::memory_order_relaxed);
  auto peak = peak_.load(std::memory_order_relaxed);
  while (now > peak && !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void MemoryAccounting::on_free(std::size_t bytes) noexcept {
  live_.fetch_sub(bytes, std::memory_order_relaxed);
  freed_.fetch_add(bytes, std::memory_order_relaxed);
  frees_.fetch_add(1, std::memory_order_relaxed);
}

MemorySnapshot MemoryAccounting::snapshot() const noexcept {
  MemorySnapshot s;
  s.live_bytes = live_.load(std::memory_order_relaxed);
  s.peak_bytes = peak_.load(std::memory_order_relaxed);
  s.allocated_bytes = allocated_.load(std::memory_order_relaxed);
  s.freed_bytes = freed_.load(std::memory_order_relaxed);
  s.allocations = allocations_.load(std::memory_order_relaxed);
  s.frees = frees_.load(std::memory_order_relaxed);
  return s;
}

void MemoryAccounting::reset_peak() noexcept {
  peak_.store(live_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

void* tracked_allocate(std::size_t bytes) {
  const std::size_t rounded = (bytes + kAlignment - 1) / kAlignment * kAlignment;
  void* p = std::aligned_alloc(kAlignment, rounded == 0 ? kAlignment : rounded);
  if (p == nullptr) throw std::bad_alloc();
  MemoryAccounting::instance().on_allocate(bytes);
  return p;
}

void tracked_free(void* ptr, std::size_t bytes) noexcept {
  if (ptr == nullptr) return;
  std::free(ptr);
  MemoryAccounting::instance().on_free(bytes);
}

}  // namespace edgelite
