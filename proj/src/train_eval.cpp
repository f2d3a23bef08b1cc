#include "crihp/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"

namespace crihp {

using diff::Matrix;
using diff::Var;
using nlohmann::json;

Var kl_to_uniform(const RelationPosterior& posterior) {
  // KL(q || 1/K) = sum_k q_k log q_k + log K, averaged over ordered pairs.
  return diff::add_scalar(diff::mean(diff::row_neg_entropy(posterior.logits)),
                          std::log(static_cast<double>(posterior.k_edge)));
}

LossTerms elbo_loss(const Batch& batch, const CrihpModel& model, const TrainConfig& config, double temperature,
                    std::uint64_t seed, const ContrastContext* contrast) {
  const std::size_t members = batch.size();
  if (members == 0) throw ValidationError("elbo_loss on an empty batch");
  LossTerms out;
  std::vector<Var> terms;
  std::vector<Var> latents;
  std::vector<std::optional<RelationPosterior>> posteriors;
  for (std::size_t k = 0; k < members; ++k) {
    const EventSequence& seq = batch.sequences[k];
    if (seq.empty()) throw ValidationError("training batches must not contain empty sequences");
    const std::uint64_t member = k < batch.indices.size() ? batch.indices[k] : k;
    const auto fwd =
        forward_sequence(model, seq, training_options(config, temperature, hash_combine(seed, 2 * member)));
    const Var ll =
        log_likelihood(seq, fwd.hidden, model.params, config.mc_samples, hash_combine(seed, 2 * member + 1));
    out.log_likelihood += ll.item();
    terms.push_back(diff::scale(ll, -1.0));
    if (config.use_lvm && fwd.posterior) {
      const Var kl = kl_to_uniform(*fwd.posterior);
      out.kl += kl.item() / static_cast<double>(members);
      terms.push_back(diff::scale(kl, config.beta_kl));
    }
    if (config.use_cri) latents.push_back(encode_latent(fwd.posterior, fwd.embedding, model.k_edge));
  }

  if (config.use_cri && members >= 2) {
    if (!contrast) throw ValidationError("contrastive term enabled without prototype paths");
    std::vector<PrototypePath> paths;
    for (std::size_t idx : batch.indices) paths.push_back(contrast->paths.at(idx));
    for (const auto& sel : sample_pairs(otd_distance_matrix(paths, contrast->deletion_cost))) {
      if (sel.negatives.empty()) {
        ++out.skipped_anchors;
        continue;
      }
      std::vector<Var> negs;
      for (std::size_t j : sel.negatives) negs.push_back(latents[j]);
      const Var loss = nt_xent(latents[sel.anchor], latents[sel.positive], negs, config.tau,
                               config.include_positive_in_denominator);
      out.cri += loss.item() / static_cast<double>(members);
      terms.push_back(diff::scale(loss, config.beta_cri));
    }
  } else if (config.use_cri) {
    out.skipped_anchors += members;
  }

  out.total = diff::scale(diff::sum(diff::concat(terms, diff::Axis::Rows)), 1.0 / static_cast<double>(members));
  return out;
}

double gumbel_temperature(const TrainConfig& config, int epoch) {
  if (config.epochs <= 1) return config.gumbel_temp_start;
  const double frac = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
  return config.gumbel_temp_start * std::pow(config.gumbel_temp_end / config.gumbel_temp_start, frac);
}

double dataset_nll(const CrihpModel& model, const Dataset& dataset, const TrainConfig& config) {
  double total = 0.0;
  std::size_t events = 0;
  const auto options = evaluation_options(config);
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const EventSequence& seq = dataset.sequences[s];
    if (seq.empty()) continue;
    const auto fwd = forward_sequence(model, seq, options);
    total -= log_likelihood(seq, fwd.hidden, model.params, config.mc_samples, hash_combine(0x6e6c6cULL, s)).item();
    events += seq.size();
  }
  return events == 0 ? 0.0 : total / static_cast<double>(events);
}

Dataset prepare_training_data(const Dataset& dataset, const TrainConfig& config) {
  Dataset out;
  out.name = dataset.name;
  out.vocab_size = dataset.vocab_size;
  for (const auto& seq : dataset.sequences) {
    if (seq.empty()) continue;
    out.sequences.push_back(config.max_length > 0 ? seq.prefix(static_cast<std::size_t>(config.max_length)) : seq);
  }
  return out;
}

namespace {

CrihpModel clone_model(const CrihpModel& m) { return {m.vocab_size, m.embed_dim, m.k_edge, m.params.clone()}; }

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set) {
  config.validate();
  const Dataset data = prepare_training_data(train_set, config);
  if (data.sequences.empty()) throw ValidationError("training set has no non-empty sequences");
  Dataset val = prepare_training_data(val_set, config);
  if (val.sequences.empty()) val = data;

  TrainConfig resolved = config;
  resolved.vocab_size = config.vocab_size > 0 ? config.vocab_size : std::max(data.vocab_size, val.vocab_size);
  CrihpModel model = CrihpModel::create(resolved, resolved.vocab_size);

  ContrastContext contrast;
  if (resolved.use_cri) {
    contrast.deletion_cost = resolved.del_cost > 0.0 ? resolved.del_cost : data.mean_inter_event_gap();
    if (resolved.use_prototype_search) {
      const PrototypeModel proto = train_prototype(data, resolved);
      for (const auto& seq : data.sequences) {
        contrast.paths.push_back(extract_prototype_path(seq, proto, resolved.quantile_q, resolved.n_pt_cap));
      }
    } else {
      for (const auto& seq : data.sequences) contrast.paths.push_back(whole_sequence_path(seq));
    }
  }

  diff::Adam adam({resolved.learning_rate, 0.9, 0.999, 1e-8, resolved.clip_norm});
  TrainResult result{clone_model(model), resolved, {}, 0.0, 0.0};
  result.initial_val_nll = dataset_nll(model, val, resolved);
  result.best_val_nll = result.initial_val_nll;

  const auto start = std::chrono::steady_clock::now();
  const auto batch_size = static_cast<std::size_t>(resolved.batch_size);
  for (int epoch = 0; epoch < resolved.epochs; ++epoch) {
    const double temperature = gumbel_temperature(resolved, epoch);
    const auto batches = make_batches(data, batch_size, hash_combine(resolved.seed, 0xe90c0000ULL + epoch), true);
    EpochLog row;
    row.epoch = epoch + 1;
    row.gumbel_temp = temperature;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::uint64_t seed = hash_combine(hash_combine(resolved.seed, epoch), b);
      const LossTerms terms = elbo_loss(batches[b], model, resolved, temperature, seed, &contrast);
      const double loss = terms.total.item();
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                             std::to_string(b + 1));
      }
      model.params.zero_grad();
      diff::backward(terms.total);
      adam.step(model.params);
      const auto members = static_cast<double>(batches[b].size());
      row.train_loss += loss * members;
      row.train_ll += terms.log_likelihood;
      row.kl += terms.kl * members;
      row.cri_loss += terms.cri * members;
    }
    model.params.zero_grad();
    const auto count = static_cast<double>(data.size());
    row.train_loss /= count;
    row.train_ll /= count;
    row.kl /= count;
    row.cri_loss /= count;
    row.val_nll = dataset_nll(model, val, resolved);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (row.val_nll <= result.best_val_nll) {
      result.best_val_nll = row.val_nll;
      result.best = clone_model(model);
    }
    result.log.push_back(row);
  }
  return result;
}

Dataset toy_dataset(int types, std::size_t max_events, std::uint64_t seed) {
  const HawkesParams params = random_hawkes_params(types, seed);
  Dataset out;
  out.vocab_size = types;
  out.name = "toy";
  for (std::uint64_t s = 0; out.sequences.size() < 3; ++s) {
    EventSequence seq = simulate(params, 20.0, hash_combine(seed, s));
    if (seq.size() < 2) continue;
    out.sequences.push_back(seq.prefix(std::min(max_events, seq.size())));
  }
  return out;
}

diff::GradCheckReport elbo_gradient_check(const TrainConfig& config, const Dataset& data, double h, double tol) {
  TrainConfig resolved = config;
  resolved.vocab_size = config.vocab_size > 0 ? config.vocab_size : data.vocab_size;
  resolved.validate();
  CrihpModel model = CrihpModel::create(resolved, resolved.vocab_size);
  ContrastContext contrast;
  contrast.deletion_cost = resolved.del_cost > 0.0 ? resolved.del_cost : data.mean_inter_event_gap();
  for (const auto& seq : data.sequences) contrast.paths.push_back(whole_sequence_path(seq));
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch batch = make_batch(data, all);
  const double temperature = resolved.gumbel_temp_start;
  auto loss = [&](diff::ParamStore& params) {
    CrihpModel view{model.vocab_size, model.embed_dim, model.k_edge, params};
    return elbo_loss(batch, view, resolved, temperature, hash_combine(resolved.seed, 0x67726164ULL), &contrast)
        .total;
  };
  return diff::grad_check(loss, model.params, h, tol);
}

void write_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_loss,train_ll,kl,cri_loss,val_nll,gumbel_temp,wall_seconds\n";
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_ll << ',' << r.kl << ',' << r.cri_loss << ','
        << r.val_nll << ',' << r.gumbel_temp << ',' << r.wall_seconds << '\n';
  }
}

void save_model(const std::filesystem::path& path, const CrihpModel& model, const TrainConfig& config) {
  TrainConfig stored = config;
  stored.vocab_size = model.vocab_size;
  json extra;
  extra["config"] = json::parse(stored.to_json());
  diff::save_checkpoint(path, model.params, extra.dump(), stored.architecture_hash());
}

LoadedModel load_model(const std::filesystem::path& path) {
  diff::Checkpoint ck = diff::load_checkpoint(path);
  const json extra = json::parse(ck.extra_json);
  if (!extra.contains("config")) throw FormatError(1, "checkpoint lacks a model config");
  TrainConfig config = TrainConfig::from_json(extra["config"].dump());
  if (config.architecture_hash() != ck.config_hash) {
    throw ValidationError("checkpoint config hash does not match its stored config");
  }
  CrihpModel model = CrihpModel::create(config, config.vocab_size);
  for (const auto& name : model.params.names()) {
    const Matrix& stored = ck.params.get(name).value();
    diff::Node& node = *model.params.get(name).node();
    if (stored.rows() != node.value.rows() || stored.cols() != node.value.cols()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + diff::shape_string(stored) +
                       ", model expects " + diff::shape_string(node.value));
    }
    node.value = stored;
  }
  return {std::move(model), config};
}

NextEventPrediction predict_next(const EventSequence& prefix, const CrihpModel& model, const TrainConfig& config,
                                 double mean_gap, bool allow_truncation) {
  if (prefix.empty()) throw ValidationError("next-event prediction needs a non-empty prefix");
  const auto fwd = forward_sequence(model, prefix, evaluation_options(config));
  const IntensityReadout readout = IntensityReadout::from(model.params);
  const diff::RowVector state = fwd.hidden.h.value().row(fwd.hidden.h.rows() - 1);
  const diff::RowVector activation = state * readout.weights + readout.bias;
  return predict_from_activation(activation, readout.drift, prefix.times.back(), config.horizon_factor * mean_gap,
                                 config.integration_grid, allow_truncation);
}

std::vector<PredictionRow> predict_dataset(const CrihpModel& model, const Dataset& dataset,
                                           const TrainConfig& config) {
  const double mean_gap = dataset.mean_inter_event_gap();
  std::vector<PredictionRow> rows;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const EventSequence& seq = dataset.sequences[s];
    for (std::size_t i = 1; i < seq.size(); ++i) {
      const auto pred = predict_next(seq.prefix(i), model, config, mean_gap, true);
      const double last = seq.times[i - 1];
      rows.push_back({s, i, seq.marks[i], pred.mark, seq.times[i] - last, pred.time - last});
    }
  }
  return rows;
}

std::vector<std::vector<double>> relation_scores(const CrihpModel& model, const Dataset& dataset,
                                                 const TrainConfig& config) {
  const auto e = static_cast<std::size_t>(model.vocab_size);
  std::vector<std::vector<double>> sum(e, std::vector<double>(e, 0.0));
  std::vector<std::vector<std::size_t>> count(e, std::vector<std::size_t>(e, 0));
  const auto options = evaluation_options(config);
  for (const auto& seq : dataset.sequences) {
    if (seq.size() < 2) continue;
    const auto fwd = forward_sequence(model, seq, options);
    const auto n = static_cast<Eigen::Index>(seq.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto u = static_cast<std::size_t>(seq.marks[static_cast<std::size_t>(i)]);
        const auto v = static_cast<std::size_t>(seq.marks[static_cast<std::size_t>(j)]);
        sum[u][v] += 1.0 - fwd.posterior->prob(i, j, kNoEdge);
        ++count[u][v];
      }
    }
  }
  std::vector<std::vector<double>> out(e, std::vector<double>(e, std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t u = 0; u < e; ++u) {
    for (std::size_t v = 0; v < e; ++v) {
      if (count[u][v] > 0) out[u][v] = sum[u][v] / static_cast<double>(count[u][v]);
    }
  }
  return out;
}

std::optional<double> roc_auc(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<bool>>& labels) {
  std::vector<double> pos, neg;
  for (std::size_t u = 0; u < scores.size(); ++u) {
    for (std::size_t v = 0; v < scores[u].size(); ++v) {
      if (std::isnan(scores[u][v])) continue;
      (labels.at(u).at(v) ? pos : neg).push_back(scores[u][v]);
    }
  }
  if (pos.empty() || neg.empty()) return std::nullopt;
  double wins = 0.0;
  for (double p : pos) {
    for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw ValidationError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double rmse(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size()) throw ValidationError("rmse: length mismatch");
  if (truth.empty()) return 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sq += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
  return std::sqrt(sq / static_cast<double>(truth.size()));
}

Metrics evaluate(const CrihpModel& model, const Dataset& dataset, const TrainConfig& config,
                 const std::optional<GroundTruthGraph>& truth) {
  std::vector<int> pred_marks, true_marks;
  std::vector<double> pred_dt, true_dt;
  for (const auto& row : predict_dataset(model, dataset, config)) {
    pred_marks.push_back(row.pred_mark);
    true_marks.push_back(row.true_mark);
    pred_dt.push_back(row.pred_dt);
    true_dt.push_back(row.true_dt);
  }
  Metrics m;
  m.acc = accuracy(pred_marks, true_marks);
  m.rmse = rmse(pred_dt, true_dt);
  m.nll = dataset_nll(model, dataset, config);
  if (truth) {
    if (truth->adjacency.size() != static_cast<std::size_t>(model.vocab_size)) {
      throw ValidationError("ground-truth graph has " + std::to_string(truth->adjacency.size()) +
                            " types but the model has " + std::to_string(model.vocab_size));
    }
    m.relation_auc = roc_auc(relation_scores(model, dataset, config), truth->adjacency);
  }
  return m;
}

void write_metrics_csv(std::ostream& out, const Metrics& metrics) {
  out << "acc,rmse,relation_auc,nll\n" << std::setprecision(10) << metrics.acc << ',' << metrics.rmse << ',';
  if (metrics.relation_auc) out << *metrics.relation_auc;
  out << ',' << metrics.nll << '\n';
}

void write_truth_sidecar(const std::filesystem::path& path, const HawkesParams& params) {
  json j;
  j["mu"] = params.mu;
  j["alpha"] = params.alpha;
  j["beta"] = params.beta;
  j["adjacency"] = ground_truth(params).adjacency;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

TruthSidecar read_truth_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground-truth sidecar " + path.string());
  json j;
  try {
    in >> j;
    TruthSidecar t;
    t.params.mu = j.at("mu").get<std::vector<double>>();
    t.params.alpha = j.at("alpha").get<std::vector<std::vector<double>>>();
    t.params.beta = j.at("beta").get<double>();
    t.graph = j.contains("adjacency")
                  ? GroundTruthGraph{j["adjacency"].get<std::vector<std::vector<bool>>>()}
                  : ground_truth(t.params);
    return t;
  } catch (const json::exception& e) {
    throw FormatError(1, "ground-truth sidecar " + path.string() + ": " + e.what());
  }
}

}  // namespace crihp
