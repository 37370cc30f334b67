#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace flowlab {

// Splits [0, n) into fixed-size chunks, maps each chunk on a worker pool and
// folds the per-chunk results in chunk order. Chunk boundaries depend only on
// n and chunk_size, so the reduced value is bit-identical for any worker
// count.
template <class Acc, class MapFn, class FoldFn>
Acc chunked_reduce(std::int64_t n, std::int64_t chunk_size, int workers, MapFn map_chunk,
                   Acc init, FoldFn fold) {
  if (n <= 0) return init;
  if (chunk_size <= 0) chunk_size = 1;
  const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
  std::vector<Acc> results(static_cast<std::size_t>(n_chunks), init);

  auto run_chunk = [&](std::int64_t c) {
    const std::int64_t lo = c * chunk_size;
    const std::int64_t hi = std::min(n, lo + chunk_size);
    results[static_cast<std::size_t>(c)] = map_chunk(lo, hi);
  };

  if (workers <= 1 || n_chunks == 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex err_mu;
    auto worker = [&] {
      for (;;) {
        const std::int64_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        try {
          run_chunk(c);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    const int nw = static_cast<int>(std::min<std::int64_t>(workers, n_chunks));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  Acc acc = init;
  for (std::int64_t c = 0; c < n_chunks; ++c)
    acc = fold(std::move(acc), std::move(results[static_cast<std::size_t>(c)]));
  return acc;
}

}  // namespace flowlab
