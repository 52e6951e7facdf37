// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/rng.hpp>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace cnnlab {

double Rng::normal() {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(*this);
}

std::uint64_t Rng::below(std::uint64_t n) {
  boost::random::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(*this);
}

} // namespace cnnlab
