#pragma once

#include <cstdint>
#include <string_view>

namespace ebmon {

// Counter-based deterministic generator (splitmix64). Every consumer takes an
// explicit seed; substreams are derived from the root seed by stable labels,
// so adding one centre never perturbs another centre's draws. No use of
// std::*_distribution keeps sequences identical across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  Rng substream(std::string_view label) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t next_u64();
  double uniform01();            // [0, 1)
  double normal();               // standard normal, Box-Muller
  bool bernoulli(double p);
  long poisson(double mean);

private:
  std::uint64_t root_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ebmon
