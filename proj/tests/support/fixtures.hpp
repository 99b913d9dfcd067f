#pragma once

#include <string>
#include <vector>

#include "cast/error.hpp"
#include "cast/rng.hpp"
#include "cast/simplex.hpp"
#include "cast/theory.hpp"

namespace cast::fixture {

/// Random walk on the simplex: each step mixes a fresh Dirichlet(1) draw into the previous state.
inline std::vector<SimplexSeries> random_walks(std::uint64_t seed, std::size_t n, std::size_t len, std::size_t d,
                                               bool ordered = true, double step = 0.2) {
  Philox rng(seed, 0);
  std::vector<SimplexSeries> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Dist> steps{random_simplex_point(rng, d, 0.1)};
    while (steps.size() < len) steps.push_back(convex_mix(random_simplex_point(rng, d, 0.1), steps.back(), step));
    out.emplace_back("s" + std::to_string(100 + i), ordered, std::move(steps));
  }
  return out;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(-1);
}

}  // namespace cast::fixture
