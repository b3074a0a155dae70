#ifndef DEMUX_PARALLEL_HPP
#define DEMUX_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace demux {

// Worker cap: DEMUX_WORKERS if set, otherwise hardware concurrency.
std::size_t worker_count();
void set_worker_count(std::size_t workers);

// Calls fn(i) for every i in [0, n). Each index runs exactly once; callers
// write disjoint outputs per index so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Fixed shard partition of [0, n) that does not depend on the worker count,
// used for reductions that must be bitwise reproducible.
struct ShardRange {
  std::size_t begin;
  std::size_t end;
};
constexpr std::size_t kReductionShards = 8;
std::size_t shard_count(std::size_t n);
ShardRange shard_range(std::size_t n, std::size_t shard);

}  // namespace demux

#endif  // DEMUX_PARALLEL_HPP
