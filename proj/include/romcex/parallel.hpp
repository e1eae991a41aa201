#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "romcex/error.hpp"

namespace romcex {

/// Runs fn(k) for k in [0, count) on up to `threads` workers (0 picks the
/// hardware concurrency). Work is strided across workers so each index is
/// touched by exactly one thread. The lowest failing index is rethrown with
/// `label k: ` prepended.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, const std::string& label, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](std::size_t k) {
    try {
      fn(k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const unsigned workers = static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(threads, count)));
  if (workers == 1) {
    for (std::size_t k = 0; k < count; ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < count; k += workers) run(k);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t k = 0; k < count; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error& e) {
      throw Error(e.kind(), label + " " + std::to_string(k) + ": " + e.what());
    }
  }
}

}  // namespace romcex
