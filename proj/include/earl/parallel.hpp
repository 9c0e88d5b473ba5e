#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

namespace earl {

using Rng = std::mt19937_64;

/// Independent generator for task `task` under base seed `seed`. Results of
/// a task depend only on (seed, task), never on scheduling.
inline Rng make_stream(std::uint64_t seed, std::uint64_t task = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. The first
/// exception (by task index) is rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (count == 0) return;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Random partition of {0..n-1} into k folds whose sizes differ by at most
/// one; each fold is returned sorted.
inline std::vector<std::vector<std::size_t>> random_folds(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t j = 0; j < n; ++j) folds[j % k].push_back(perm[j]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& sorted_rows) {
  std::vector<std::size_t> out;
  out.reserve(n - sorted_rows.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < sorted_rows.size() && sorted_rows[k] == i)
      ++k;
    else
      out.push_back(i);
  }
  return out;
}

}  // namespace earl
