#pragma once

// Data-parallel sampling driver. Samples are split into contiguous
// per-worker chunks, each worker owns its own seeded stream, and the
// per-worker accumulators are merged in worker order, so a run is
// bit-reproducible for fixed (seed, workers).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "fokker/random.hpp"

namespace fokker {

/// Running mean and sum of squared deviations (Welford), mergeable.
struct Accumulator {
  std::size_t count = 0;
  std::size_t skipped = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const Accumulator& o) {
    skipped += o.skipped;
    if (o.count == 0) return;
    if (count == 0) {
      const auto s = skipped;
      *this = o;
      skipped = s;
      return;
    }
    const double n = static_cast<double>(count);
    const double m = static_cast<double>(o.count);
    const double delta = o.mean - mean;
    mean += delta * m / (n + m);
    m2 += o.m2 + delta * delta * n * m / (n + m);
    count += o.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stderr_of_mean() const {
    return count > 0 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
  }
};

struct SamplingConfig {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::uint64_t tag_a = 0;  ///< stream tags, e.g. proper-time grid indices
  std::uint64_t tag_b = 0;
};

/// Runs draw(rng) n_samples times; an empty optional counts as skipped.
template <class Draw>
Accumulator run_sampling(const SamplingConfig& cfg, Draw&& draw) {
  const std::size_t workers = cfg.workers == 0 ? 1 : cfg.workers;
  std::vector<Accumulator> partial(workers);
  std::vector<std::exception_ptr> errors(workers);

  auto job = [&](std::size_t w) {
    try {
      Rng rng = make_stream(cfg.seed, w, cfg.tag_a, cfg.tag_b);
      const std::size_t begin = cfg.n_samples * w / workers;
      const std::size_t end = cfg.n_samples * (w + 1) / workers;
      for (std::size_t i = begin; i < end; ++i) {
        const std::optional<double> x = draw(rng);
        if (x) {
          partial[w].add(*x);
        } else {
          ++partial[w].skipped;
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (workers == 1) {
    job(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(job, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Accumulator total;
  for (const auto& a : partial) total.merge(a);
  return total;
}

}  // namespace fokker
