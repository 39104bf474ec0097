#pragma once

#include <cstdint>
#include <random>

namespace fokker {

using Rng = std::mt19937_64;

/// Independent, explicitly seeded stream for one sampling worker. The
/// extra tags let callers derive streams per grid point or per task.
inline Rng make_stream(std::uint64_t seed, std::uint64_t worker, std::uint64_t tag_a = 0,
                       std::uint64_t tag_b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(worker), static_cast<std::uint32_t>(tag_a),
                    static_cast<std::uint32_t>(tag_b), 0x9e3779b9u};
  return Rng(seq);
}

}  // namespace fokker
