#pragma once

// Deterministic parallel map-reduce over an index range.
//
// Indices are cut into fixed-size chunks whose boundaries do not depend on the
// thread count. Each chunk is reduced sequentially from a fresh accumulator,
// and chunk results are folded into the total in chunk order. The result is
// therefore bitwise identical for any number of threads.

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ikl/error.hpp"

namespace ikl {

// Explicit request wins, then IKL_THREADS, then the hardware count.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("IKL_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw DomainError(std::string("IKL_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::min<std::size_t>(count, 1u << 20))));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(threads)) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// total = fold(..fold(fold(init(), c_0), c_1).., c_last) where chunk c_j is
// obtained by work(acc, i) over its indices starting from init(). At most
// `threads` chunk accumulators are alive at a time.
template <class Init, class Work, class Fold>
auto chunked_reduce(std::size_t count, std::size_t chunk, int threads, Init init, Work work, Fold fold) {
  using Acc = decltype(init());
  if (chunk == 0) throw DomainError("chunked_reduce: chunk size must be positive");
  Acc total = init();
  const std::size_t chunks = (count + chunk - 1) / chunk;
  threads = std::max(1, threads);
  for (std::size_t wave = 0; wave < chunks; wave += static_cast<std::size_t>(threads)) {
    const std::size_t in_wave = std::min<std::size_t>(threads, chunks - wave);
    std::vector<std::optional<Acc>> partial(in_wave);
    parallel_for(in_wave, threads, [&](std::size_t c) {
      Acc acc = init();
      const std::size_t lo = (wave + c) * chunk, hi = std::min(count, lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) work(acc, i);
      partial[c].emplace(std::move(acc));
    });
    for (auto& p : partial) fold(total, *p);
  }
  return total;
}

}  // namespace ikl
