#include "crihp/cri.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"
#include "crihp/train_eval.hpp"

namespace crihp {

using diff::Matrix;
using diff::Var;

PrototypeModel PrototypeModel::recurrent(int vocab_size, int hidden, std::uint64_t seed) {
  PrototypeModel m;
  m.kind = PrototypeKind::Recurrent;
  m.vocab_size = vocab_size;
  m.params = diff::ParamStore(hash_combine(seed, 0x70726f746fULL));
  m.params.add_weight("proto.embed", vocab_size, hidden);
  m.params.add_weight("proto.W_state", hidden, hidden);
  m.params.add_weight("proto.w_dt", 1, hidden);
  m.params.add_zeros("proto.b_state", 1, hidden);
  m.params.add_weight("proto.out.W", hidden, vocab_size);
  m.params.add_zeros("proto.out.b", 1, vocab_size);
  m.params.add_zeros("proto.out.v", 1, vocab_size);
  return m;
}

Var recurrent_activations(const PrototypeModel& model, const EventSequence& seq) {
  const auto& p = model.params;
  const Var& w_state = p.get("proto.W_state");
  const Eigen::Index hidden = w_state.rows();
  std::vector<Var> states{diff::constant(Matrix::Zero(1, hidden))};
  states.reserve(seq.size() + 1);
  double prev = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int mark[] = {seq.marks[i]};
    const double gap = std::log1p(seq.times[i] - prev);
    prev = seq.times[i];
    Var pre = diff::add(diff::matmul(states.back(), w_state), diff::gather_rows(p.get("proto.embed"), mark));
    pre = diff::add(pre, diff::scale(p.get("proto.w_dt"), gap));
    states.push_back(diff::tanh(diff::add(pre, p.get("proto.b_state"))));
  }
  const Var stacked = diff::concat(states, diff::Axis::Rows);
  return diff::add_row(diff::matmul(stacked, p.get("proto.out.W")), p.get("proto.out.b"));
}

Var prototype_log_likelihood(const PrototypeModel& model, const EventSequence& seq, int mc_samples,
                             std::uint64_t seed) {
  if (model.kind != PrototypeKind::Recurrent) {
    throw ValidationError("prototype_log_likelihood applies to the recurrent prototype model");
  }
  return point_process_log_likelihood(seq, recurrent_activations(model, seq), model.params.get("proto.out.v"),
                                      mc_samples, seed);
}

std::vector<double> prototype_scores(const PrototypeModel& model, const EventSequence& seq) {
  if (seq.empty()) return {};
  Matrix acts;
  diff::RowVector drift;
  if (model.kind == PrototypeKind::Recurrent) {
    acts = recurrent_activations(model, seq).value();
    drift = model.params.get("proto.out.v").value().row(0);
  } else {
    if (!model.decoder) throw ValidationError("decoder prototype model has no trained decoder");
    const auto fwd = forward_sequence(*model.decoder, seq, evaluation_options(model.decoder_config));
    acts = interval_activations(fwd.hidden, model.decoder->params).value();
    drift = model.decoder->params.get("intensity.v").value().row(0);
  }
  std::vector<double> scores(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double dt = seq.times[i] - (i == 0 ? 0.0 : seq.times[i - 1]);
    const auto row = static_cast<Eigen::Index>(i);
    const double a = acts(row, seq.marks[i]) + drift(seq.marks[i]) * dt;
    scores[i] = a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
  }
  return scores;
}

PrototypeModel train_prototype(const Dataset& dataset, const TrainConfig& config,
                               std::vector<double>* epoch_log_likelihood) {
  Dataset data = prepare_training_data(dataset, config);
  if (data.sequences.empty()) throw ValidationError("prototype training needs a non-empty training set");
  const int vocab = config.vocab_size > 0 ? config.vocab_size : data.vocab_size;

  if (config.prototype_model == PrototypeKind::Decoder) {
    TrainConfig sub = config;
    sub.use_cri = false;
    sub.epochs = config.prototype_epochs;
    sub.vocab_size = vocab;
    sub.seed = hash_combine(config.seed, 0x646563ULL);
    TrainResult fit = train(sub, data, data);
    if (epoch_log_likelihood) {
      for (const auto& row : fit.log) epoch_log_likelihood->push_back(row.train_ll);
    }
    PrototypeModel m;
    m.kind = PrototypeKind::Decoder;
    m.vocab_size = vocab;
    m.decoder = std::move(fit.best);
    m.decoder_config = sub;
    return m;
  }

  PrototypeModel model = PrototypeModel::recurrent(vocab, config.prototype_hidden, config.seed);
  diff::Adam adam({config.learning_rate, 0.9, 0.999, 1e-8, config.clip_norm});
  const auto batch_size = static_cast<std::size_t>(std::max(1, config.batch_size));
  for (int epoch = 0; epoch < config.prototype_epochs; ++epoch) {
    const auto batches = make_batches(data, batch_size, hash_combine(config.seed, 0x5054ULL + epoch), true);
    double ll_total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      std::vector<Var> terms;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const std::uint64_t seed = hash_combine(hash_combine(config.seed, epoch), b * 1000003ULL + k);
        terms.push_back(prototype_log_likelihood(model, batch.sequences[k], config.mc_samples, seed));
      }
      const Var total_ll = diff::sum(diff::concat(terms, diff::Axis::Rows));
      if (!std::isfinite(total_ll.item())) {
        throw NumericalError("prototype training: non-finite log-likelihood at epoch " +
                             std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      }
      ll_total += total_ll.item();
      model.params.zero_grad();
      diff::backward(diff::scale(total_ll, -1.0 / static_cast<double>(batch.size())));
      adam.step(model.params);
    }
    if (epoch_log_likelihood) epoch_log_likelihood->push_back(ll_total / static_cast<double>(data.size()));
  }
  model.params.zero_grad();
  return model;
}

std::vector<std::size_t> select_prototype_events(std::span<const double> scores, double quantile_q, int cap) {
  const std::size_t n = scores.size();
  if (n == 0) return {};
  if (!(quantile_q > 0.0 && quantile_q <= 1.0)) throw ValidationError("quantile_q must be in (0, 1]");
  if (cap < 1) throw ValidationError("prototype path cap must be positive");

  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(quantile_q * static_cast<double>(n) - 1e-9)), 1, n);
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double threshold = sorted[keep - 1];

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i] >= threshold) kept.push_back(i);
  }
  const auto limit = static_cast<std::size_t>(cap);
  if (kept.size() > limit) {
    std::stable_sort(kept.begin(), kept.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    kept.resize(limit);
    std::sort(kept.begin(), kept.end());
  }
  return kept;
}

PrototypePath extract_prototype_path(const EventSequence& seq, const PrototypeModel& model, double quantile_q,
                                     int cap) {
  if (seq.empty()) throw ValidationError("prototype path of an empty sequence");
  const auto scores = prototype_scores(model, seq);
  PrototypePath path;
  for (std::size_t i : select_prototype_events(scores, quantile_q, cap)) {
    path.marks.push_back(seq.marks[i]);
    path.times.push_back(seq.times[i]);
    path.scores.push_back(scores[i]);
    path.source.push_back(i);
  }
  return path;
}

PrototypePath whole_sequence_path(const EventSequence& seq) {
  PrototypePath path;
  path.marks = seq.marks;
  path.times = seq.times;
  path.scores.assign(seq.size(), 0.0);
  path.source.resize(seq.size());
  std::iota(path.source.begin(), path.source.end(), std::size_t{0});
  return path;
}

namespace {

double aligned_cost(const std::vector<double>& a, const std::vector<double>& b, double deletion_cost) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = deletion_cost * static_cast<double>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = deletion_cost * static_cast<double>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = std::min({prev[j - 1] + std::abs(a[i - 1] - b[j - 1]), prev[j] + deletion_cost,
                         cur[j - 1] + deletion_cost});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

double otd_distance(const PrototypePath& a, const PrototypePath& b, double deletion_cost) {
  if (!(deletion_cost > 0.0)) throw ValidationError("OTD deletion cost must be positive");
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_mark;
  for (std::size_t i = 0; i < a.size(); ++i) by_mark[a.marks[i]].first.push_back(a.times[i]);
  for (std::size_t i = 0; i < b.size(); ++i) by_mark[b.marks[i]].second.push_back(b.times[i]);
  double total = 0.0;
  for (const auto& [mark, lists] : by_mark) total += aligned_cost(lists.first, lists.second, deletion_cost);
  return total;
}

Matrix otd_distance_matrix(std::span<const PrototypePath> paths, double deletion_cost) {
  const auto n = static_cast<Eigen::Index>(paths.size());
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = otd_distance(paths[static_cast<std::size_t>(i)], paths[static_cast<std::size_t>(j)],
                                       deletion_cost);
    }
  }
  return d;
}

std::vector<ContrastSelection> sample_pairs(const Matrix& distances) {
  const auto n = static_cast<std::size_t>(distances.rows());
  if (n < 2) throw ValidationError("contrastive sampling needs a batch of at least two sequences");
  std::vector<ContrastSelection> out;
  for (std::size_t a = 0; a < n; ++a) {
    ContrastSelection sel;
    sel.anchor = a;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      const double d = distances(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      if (b != a && d < best) {
        best = d;
        sel.positive = b;
      }
    }
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a && b != sel.positive) sel.negatives.push_back(b);
    }
    out.push_back(std::move(sel));
  }
  return out;
}

std::vector<ContrastSelection> sample_pairs(const Batch& batch, const PrototypeModel* prototype,
                                            const TrainConfig& config, double deletion_cost) {
  if (batch.size() < 2) throw ValidationError("contrastive sampling needs a batch of at least two sequences");
  std::vector<PrototypePath> paths;
  for (const auto& seq : batch.sequences) {
    if (config.use_prototype_search && prototype) {
      paths.push_back(extract_prototype_path(seq, *prototype, config.quantile_q, config.n_pt_cap));
    } else {
      paths.push_back(whole_sequence_path(seq));
    }
  }
  return sample_pairs(otd_distance_matrix(paths, deletion_cost));
}

Var encode_latent(const std::optional<RelationPosterior>& posterior, const Var& embedding, int k_edge) {
  if (posterior && (posterior->n != embedding.rows() || posterior->k_edge != k_edge)) {
    throw ShapeError("encode_latent: posterior over " + std::to_string(posterior->n) + " events vs embedding " +
                     diff::shape_string(embedding.value()));
  }
  Var edge_part;
  if (posterior) {
    edge_part = diff::mean_rows(posterior->probs);
  } else {
    // A single event has only its self-pair, which is NO_EDGE by convention.
    Matrix onehot = Matrix::Zero(1, k_edge);
    onehot(0, kNoEdge) = 1.0;
    edge_part = diff::constant(std::move(onehot));
  }
  const Var parts[] = {diff::mean_rows(embedding), edge_part};
  return diff::concat(parts, diff::Axis::Cols);
}

Var nt_xent(const Var& z, const Var& z_pos, std::span<const Var> z_negs, double tau, bool include_positive) {
  if (!(tau > 0.0)) throw ValidationError("NT-Xent temperature must be positive");
  if (z_negs.empty()) throw ValidationError("NT-Xent needs at least one negative");
  const Var pos = diff::scale(diff::cosine(z, z_pos), 1.0 / tau);
  std::vector<Var> logits;
  if (include_positive) logits.push_back(pos);
  for (const auto& neg : z_negs) logits.push_back(diff::scale(diff::cosine(z, neg), 1.0 / tau));
  return diff::sub(diff::log_sum_exp(diff::concat(logits, diff::Axis::Cols)), pos);
}

}  // namespace crihp
