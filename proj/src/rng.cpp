#include "rewardrag/rng.hpp"

#include <numeric>

#include "rewardrag/errors.hpp"

namespace rewardrag::rng {

std::vector<std::size_t> sample_without_replacement(std::size_t m, std::size_t n,
                                                    Engine& g) {
  if (n > m) {
    throw InvalidInputError("sample_without_replacement: n > m");
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_below(g, m - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

}  // namespace rewardrag::rng
