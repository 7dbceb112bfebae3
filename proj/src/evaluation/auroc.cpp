#include <algorithm>
#include <cmath>
#include <numeric>

#include "anovit/evaluation.hpp"

namespace anovit {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                         " labels");
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      ++n_pos;
    else if (labels[i] == 0)
      ++n_neg;
    else
      throw ConfigError("auroc: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                        " is neither 0 nor 1");
    if (std::isnan(scores[i])) throw NumericError("auroc: score at index " + std::to_string(i) + " is NaN");
  }
  if (n_pos == 0) throw ConfigError("auroc: no anomalous (label 1) samples");
  if (n_neg == 0) throw ConfigError("auroc: no normal (label 0) samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum keeps midranks integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_midrank = (i + 1) + j;  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) twice_rank_sum += twice_midrank;
    i = j;
  }
  // U = R_pos - n_pos (n_pos + 1) / 2, all doubled.
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace anovit
