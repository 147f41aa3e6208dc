#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace sapzsl {

inline constexpr const char* kWorkersEnv = "SAPZSL_WORKERS";

/// Worker count from SAPZSL_WORKERS, or 1 when unset or malformed.
inline unsigned default_workers() {
  const char* env = std::getenv(kWorkersEnv);
  if (env == nullptr) return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<unsigned>(v) : 1u;
  } catch (...) {
    return 1;
  }
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are disjoint
/// and fixed by (n, workers), so callers writing to per-index slots get
/// results independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  const std::size_t w = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (w <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + w - 1) / w;
  std::vector<std::exception_ptr> errors(w);
  {
    std::vector<std::jthread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&fn, &errors, t, begin, end] {
        try {
          fn(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sapzsl
