#include "crihp/hawkes_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"

namespace crihp {

double HawkesParams::stability_bound() const {
  double worst = 0.0;
  for (const auto& row : alpha) {
    worst = std::max(worst, std::accumulate(row.begin(), row.end(), 0.0) / beta);
  }
  return worst;
}

void HawkesParams::validate() const {
  const auto e = mu.size();
  if (e == 0) throw ValidationError("Hawkes params need at least one event type");
  if (alpha.size() != e) throw ValidationError("alpha must be E x E");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("decay beta must be positive");
  for (double m : mu) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw ValidationError("baseline mu must be non-negative");
  }
  for (const auto& row : alpha) {
    if (row.size() != e) throw ValidationError("alpha must be E x E");
    for (double a : row) {
      if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("alpha must be non-negative");
    }
  }
  if (!(stability_bound() < 1.0)) {
    throw ValidationError("unstable Hawkes params: max row sum of alpha/beta is " +
                          std::to_string(stability_bound()));
  }
}

double intensity_at(const HawkesParams& params, const EventSequence& history, double t, int mark) {
  if (mark < 0 || mark >= params.types()) throw ValidationError("mark outside Hawkes vocabulary");
  if (!history.empty() && t < history.times.back()) {
    throw ValidationError("query time precedes the history");
  }
  double value = params.mu[static_cast<std::size_t>(mark)];
  const auto& row = params.alpha[static_cast<std::size_t>(mark)];
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history.times[i] < t) {
      value += row[static_cast<std::size_t>(history.marks[i])] *
               std::exp(-params.beta * (t - history.times[i]));
    }
  }
  return value;
}

double total_compensator(const HawkesParams& params, const EventSequence& history, double a,
                         double b) {
  const double mu_total = std::accumulate(params.mu.begin(), params.mu.end(), 0.0);
  double value = mu_total * (b - a);
  for (std::size_t i = 0; i < history.size() && history.times[i] < b; ++i) {
    double jump = 0.0;
    for (const auto& row : params.alpha) jump += row[static_cast<std::size_t>(history.marks[i])];
    const double from = std::max(0.0, a - history.times[i]);
    value += jump * (std::exp(-params.beta * from) - std::exp(-params.beta * (b - history.times[i]))) /
             params.beta;
  }
  return value;
}

std::size_t default_event_cap(const HawkesParams& params, double horizon) {
  const double max_mu = *std::max_element(params.mu.begin(), params.mu.end());
  const double cap = 10.0 * params.types() * max_mu * horizon / (1.0 - params.stability_bound());
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cap)));
}

EventSequence simulate(const HawkesParams& params, double horizon, std::uint64_t seed,
                       std::optional<std::size_t> event_cap) {
  params.validate();
  if (!(horizon > 0.0)) throw ValidationError("horizon must be positive");
  const std::size_t cap = event_cap.value_or(default_event_cap(params, horizon));
  const auto types = static_cast<std::size_t>(params.types());
  const double mu_total = std::accumulate(params.mu.begin(), params.mu.end(), 0.0);

  CounterRng rng(seed);
  EventSequence seq;
  seq.horizon = horizon;
  // excitation[u] = sum_i alpha[u][e_i] exp(-beta (t - t_i)) at the current time
  std::vector<double> excitation(types, 0.0);
  std::vector<double> lambda(types, 0.0);
  double t = 0.0;
  while (true) {
    const double bound = mu_total + std::accumulate(excitation.begin(), excitation.end(), 0.0);
    if (!(bound > 0.0)) break;
    const double wait = rng.exponential(bound);
    if (t + wait >= horizon) break;
    t += wait;
    const double decay = std::exp(-params.beta * wait);
    double total = 0.0;
    for (std::size_t u = 0; u < types; ++u) {
      excitation[u] *= decay;
      lambda[u] = params.mu[u] + excitation[u];
      total += lambda[u];
    }
    if (rng.uniform() * bound > total) continue;

    double pick = rng.uniform() * total;
    std::size_t mark = 0;
    while (mark + 1 < types && pick >= lambda[mark]) pick -= lambda[mark++];
    // Exact float ties with the previous event are measure-zero but would break ordering.
    if (!seq.times.empty() && !(t > seq.times.back())) continue;
    seq.times.push_back(t);
    seq.marks.push_back(static_cast<int>(mark));
    if (seq.size() > cap) {
      throw SimulationError("simulated event count exceeded cap " + std::to_string(cap) +
                            " (parameters near explosive)");
    }
    for (std::size_t u = 0; u < types; ++u) excitation[u] += params.alpha[u][mark];
  }
  return seq;
}

GroundTruthGraph ground_truth(const HawkesParams& params) {
  GroundTruthGraph g;
  for (const auto& row : params.alpha) {
    std::vector<bool> r;
    for (double a : row) r.push_back(a > 0.0);
    g.adjacency.push_back(std::move(r));
  }
  return g;
}

HawkesParams random_hawkes_params(int types, std::uint64_t seed, double target_rho,
                                  double edge_probability) {
  if (types < 1) throw ValidationError("need at least one event type");
  if (!(target_rho > 0.0 && target_rho < 1.0)) throw ValidationError("target_rho must be in (0,1)");
  CounterRng rng(seed);
  HawkesParams p;
  p.beta = 1.0;
  const auto e = static_cast<std::size_t>(types);
  p.mu.resize(e);
  for (auto& m : p.mu) m = 0.1 + 0.4 * rng.uniform();
  p.alpha.assign(e, std::vector<double>(e, 0.0));
  bool any = false;
  for (auto& row : p.alpha) {
    for (auto& a : row) {
      if (rng.uniform() < edge_probability) {
        a = 0.5 + 0.5 * rng.uniform();
        any = true;
      }
    }
  }
  if (!any) {
    p.alpha[static_cast<std::size_t>(rng.next_u64() % e)][static_cast<std::size_t>(rng.next_u64() % e)] =
        1.0;
  }
  const double rho = p.stability_bound();
  for (auto& row : p.alpha) {
    for (auto& a : row) a *= target_rho / rho;
  }
  return p;
}

}  // namespace crihp
