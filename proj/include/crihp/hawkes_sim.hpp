#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crihp/event_core.hpp"

namespace crihp {

/// Multivariate Hawkes process with a shared exponential decay:
///   lambda_u(t) = mu_u + sum_{t_i < t} alpha[u][e_i] * exp(-beta * (t - t_i)).
struct HawkesParams {
  std::vector<double> mu;
  std::vector<std::vector<double>> alpha;  // alpha[u][v]: jump in lambda_u per type-v event
  double beta = 1.0;

  int types() const noexcept { return static_cast<int>(mu.size()); }
  /// max_u sum_v alpha[u][v] / beta; must stay below 1.
  double stability_bound() const;
  void validate() const;
};

struct GroundTruthGraph {
  std::vector<std::vector<bool>> adjacency;  // adjacency[u][v] = alpha[u][v] > 0
};

double intensity_at(const HawkesParams& params, const EventSequence& history, double t, int mark);

/// Compensator of the total intensity on (a, b] given the history strictly before b.
double total_compensator(const HawkesParams& params, const EventSequence& history, double a,
                         double b);

/// Default cap on simulated events: 10 * E * max(mu) * T / (1 - rho).
std::size_t default_event_cap(const HawkesParams& params, double horizon);

/// Ogata thinning. The bound is the current total intensity, recomputed after
/// every candidate.
EventSequence simulate(const HawkesParams& params, double horizon, std::uint64_t seed,
                       std::optional<std::size_t> event_cap = std::nullopt);

GroundTruthGraph ground_truth(const HawkesParams& params);

/// Sparse random parameters with stability bound `target_rho`.
HawkesParams random_hawkes_params(int types, std::uint64_t seed, double target_rho = 0.6,
                                  double edge_probability = 0.4);

}  // namespace crihp
