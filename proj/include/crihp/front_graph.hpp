#pragma once

#include <optional>
#include <span>

#include "crihp/diff_core.hpp"

namespace crihp {

/// Temporal-similarity graph over the events of one sequence.
struct FrontGraph {
  diff::Matrix kernel;      // exp(-(t_i - t_j)^2 / (2 sigma^2))
  diff::Matrix normalized;  // D^{-1/2} (kernel + I) D^{-1/2}
  double sigma = 1.0;

  Eigen::Index size() const { return kernel.rows(); }
};

/// Median of all pairwise |t_i - t_j|, floored at 1e-6. Needs >= 2 times.
double select_bandwidth(std::span<const double> times);

/// `sigma` empty means automatic bandwidth; a single event falls back to 1.
FrontGraph build_front_graph(std::span<const double> times, std::optional<double> sigma);

/// Identity graph used when the front graph is ablated.
FrontGraph identity_front_graph(Eigen::Index n);

}  // namespace crihp
