#include "crihp/front_graph.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "crihp/errors.hpp"

namespace crihp {

double select_bandwidth(std::span<const double> times) {
  if (times.size() < 2) throw ValidationError("bandwidth selection needs at least two timestamps");
  std::vector<double> gaps;
  gaps.reserve(times.size() * (times.size() - 1) / 2);
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = i + 1; j < times.size(); ++j) gaps.push_back(std::abs(times[i] - times[j]));
  }
  const std::size_t mid = gaps.size() / 2;
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(mid), gaps.end());
  double median = gaps[mid];
  if (gaps.size() % 2 == 0) {
    const double lower = *std::max_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return std::max(median, 1e-6);
}

namespace {

diff::Matrix renormalize(const diff::Matrix& kernel) {
  const Eigen::Index n = kernel.rows();
  diff::Matrix a = kernel + diff::Matrix::Identity(n, n);
  const Eigen::VectorXd inv_sqrt_degree = a.rowwise().sum().array().rsqrt();
  return inv_sqrt_degree.asDiagonal() * a * inv_sqrt_degree.asDiagonal();
}

}  // namespace

FrontGraph build_front_graph(std::span<const double> times, std::optional<double> sigma) {
  if (times.empty()) throw ValidationError("front graph needs at least one timestamp");
  FrontGraph g;
  if (sigma) {
    if (!(*sigma > 0.0)) throw ValidationError("front graph bandwidth must be positive");
    g.sigma = *sigma;
  } else {
    g.sigma = times.size() >= 2 ? select_bandwidth(times) : 1.0;
  }
  const auto n = static_cast<Eigen::Index>(times.size());
  g.kernel.resize(n, n);
  const double denom = 2.0 * g.sigma * g.sigma;
  for (Eigen::Index i = 0; i < n; ++i) {
    g.kernel(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = times[static_cast<std::size_t>(i)] - times[static_cast<std::size_t>(j)];
      g.kernel(i, j) = g.kernel(j, i) = std::exp(-d * d / denom);
    }
  }
  g.normalized = renormalize(g.kernel);
  return g;
}

FrontGraph identity_front_graph(Eigen::Index n) {
  FrontGraph g;
  g.kernel = diff::Matrix::Identity(n, n);
  g.normalized = renormalize(g.kernel);
  return g;
}

}  // namespace crihp
