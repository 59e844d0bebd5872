#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace styleadapt::detail {

// Fisher-Yates driven by raw engine output, so orderings do not depend on the
// standard library's distribution implementations.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

// Endless stream of indices in [0, n), reshuffled at every epoch boundary.
class EpochStream {
 public:
  EpochStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle_indices(order_, rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle_indices(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace styleadapt::detail
