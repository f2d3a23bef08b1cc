#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crihp/config.hpp"
#include "crihp/cri.hpp"
#include "crihp/diff_core.hpp"
#include "crihp/event_core.hpp"
#include "crihp/hawkes_sim.hpp"
#include "crihp/model.hpp"

namespace crihp {

/// Mean over ordered pairs of KL(q || uniform over K edge types).
diff::Var kl_to_uniform(const RelationPosterior& posterior);

/// Precomputed, parameter-independent inputs of the contrastive term.
struct ContrastContext {
  std::vector<PrototypePath> paths;  // indexed like the training dataset
  double deletion_cost = 1.0;
};

struct LossTerms {
  diff::Var total;
  double log_likelihood = 0.0;  // summed over the batch
  double kl = 0.0;              // mean over batch members
  double cri = 0.0;             // mean over batch members (skipped anchors count 0)
  std::size_t skipped_anchors = 0;
};

/// mean over the batch of [-L_ll + beta_kl KL + beta_cri L_CRI]. `contrast`
/// may be null only when the contrastive term is disabled.
LossTerms elbo_loss(const Batch& batch, const CrihpModel& model, const TrainConfig& config,
                    double temperature, std::uint64_t seed, const ContrastContext* contrast);

/// Geometric anneal from gumbel_temp_start to gumbel_temp_end across epochs.
double gumbel_temperature(const TrainConfig& config, int epoch);

/// Mean negative log-likelihood per event with argmax relation graphs and a
/// fixed Monte Carlo seed.
double dataset_nll(const CrihpModel& model, const Dataset& dataset, const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_ll = 0.0;
  double kl = 0.0;
  double cri_loss = 0.0;
  double val_nll = 0.0;
  double gumbel_temp = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  CrihpModel best;
  TrainConfig config;  // resolved (vocab_size filled in)
  std::vector<EpochLog> log;
  double initial_val_nll = 0.0;
  double best_val_nll = 0.0;
};

/// Drops empty sequences and applies max_length truncation.
Dataset prepare_training_data(const Dataset& dataset, const TrainConfig& config);

/// Throws NumericalError (with epoch and batch) on a non-finite loss.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set);

/// Three short sequences (n <= `max_events`) simulated from a random sparse
/// Hawkes process with `types` marks; used for gradient checks.
Dataset toy_dataset(int types, std::size_t max_events, std::uint64_t seed);

/// Finite-difference check of the full training loss on `data` (one batch,
/// whole-sequence contrast paths, fixed Gumbel and Monte Carlo seeds).
diff::GradCheckReport elbo_gradient_check(const TrainConfig& config, const Dataset& data, double h = 1e-4,
                                          double tol = 1e-3);

void write_log_csv(std::ostream& out, const std::vector<EpochLog>& log);

void save_model(const std::filesystem::path& path, const CrihpModel& model, const TrainConfig& config);
struct LoadedModel {
  CrihpModel model;
  TrainConfig config;
};
LoadedModel load_model(const std::filesystem::path& path);

/// One-step-ahead prediction of the event following `prefix`. The window is
/// horizon_factor * `mean_gap`.
NextEventPrediction predict_next(const EventSequence& prefix, const CrihpModel& model,
                                 const TrainConfig& config, double mean_gap, bool allow_truncation = false);

struct PredictionRow {
  std::size_t sequence_id = 0;
  std::size_t position = 0;
  int true_mark = 0;
  int pred_mark = 0;
  double true_dt = 0.0;
  double pred_dt = 0.0;
};

/// Predicts event i from events [0, i) for every i >= 1 of every sequence.
std::vector<PredictionRow> predict_dataset(const CrihpModel& model, const Dataset& dataset,
                                           const TrainConfig& config);

/// Mean posterior EDGE probability per (mark of i, mark of j) over all event
/// pairs in the dataset; NaN where no pair exists.
std::vector<std::vector<double>> relation_scores(const CrihpModel& model, const Dataset& dataset,
                                                 const TrainConfig& config);

/// Area under the ROC curve with ties counted as one half; empty when either
/// class is missing. NaN scores are skipped.
std::optional<double> roc_auc(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<bool>>& labels);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);
double rmse(const std::vector<double>& predicted, const std::vector<double>& truth);

struct Metrics {
  double acc = 0.0;
  double rmse = 0.0;
  std::optional<double> relation_auc;
  double nll = 0.0;
};

Metrics evaluate(const CrihpModel& model, const Dataset& dataset, const TrainConfig& config,
                 const std::optional<GroundTruthGraph>& truth = std::nullopt);

void write_metrics_csv(std::ostream& out, const Metrics& metrics);

/// Ground-truth sidecar: {"mu": [...], "alpha": [[...]], "beta": x, "adjacency": [[...]]}.
/// A missing adjacency is derived from alpha on read.
void write_truth_sidecar(const std::filesystem::path& path, const HawkesParams& params);
struct TruthSidecar {
  HawkesParams params;
  GroundTruthGraph graph;
};
TruthSidecar read_truth_sidecar(const std::filesystem::path& path);

}  // namespace crihp
