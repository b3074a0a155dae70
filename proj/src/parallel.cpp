#include "demux/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace demux {

namespace {

std::size_t default_workers() {
  if (const char* env = std::getenv("DEMUX_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& workers_ref() {
  static std::atomic<std::size_t> workers{default_workers()};
  return workers;
}

}  // namespace

std::size_t worker_count() { return workers_ref().load(); }

void set_worker_count(std::size_t workers) { workers_ref().store(std::max<std::size_t>(1, workers)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> threads;
  threads.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(run);
  run();
  threads.clear();
  if (error) std::rethrow_exception(error);
}

std::size_t shard_count(std::size_t n) { return std::min(n, kReductionShards); }

ShardRange shard_range(std::size_t n, std::size_t shard) {
  const std::size_t shards = shard_count(n);
  return {n * shard / shards, n * (shard + 1) / shards};
}

}  // namespace demux
