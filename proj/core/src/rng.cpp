#include "ebmon/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ebmon {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : root_(seed), state_(seed) {}

Rng Rng::substream(std::string_view label) const {
  return Rng(mix64(root_ ^ mix64(fnv1a(label))));
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(mix64(root_ ^ mix64(index * kGamma + 0x6a09e667f3bcc909ULL)));
}

std::uint64_t Rng::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform01();  // (0, 1]
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool Rng::bernoulli(double p) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("bernoulli: p outside [0,1]");
  return uniform01() < p;
}

long Rng::poisson(double mean) {
  if (mean < 0.0) throw std::invalid_argument("poisson: negative mean");
  if (mean == 0.0) return 0;
  // Knuth's product method, chunked so exp(-lambda) never underflows.
  long total = 0;
  double remaining = mean;
  while (remaining > 0.0) {
    const double lambda = remaining > 30.0 ? 30.0 : remaining;
    remaining -= lambda;
    const double limit = std::exp(-lambda);
    double prod = 1.0;
    long k = 0;
    do {
      ++k;
      prod *= uniform01();
    } while (prod > limit);
    total += k - 1;
  }
  return total;
}

}  // namespace ebmon
