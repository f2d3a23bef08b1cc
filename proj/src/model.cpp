#include "crihp/model.hpp"

#include "crihp/errors.hpp"

namespace crihp {

CrihpModel CrihpModel::create(int vocab_size, int embed_dim, int k_edge, std::uint64_t init_seed) {
  if (vocab_size < 1) throw ValidationError("vocabulary must hold at least one mark");
  CrihpModel m{vocab_size, embed_dim, k_edge, diff::ParamStore(init_seed)};
  register_encoder_params(m.params, vocab_size, embed_dim, k_edge);
  register_decoder_params(m.params, vocab_size, embed_dim);
  return m;
}

CrihpModel CrihpModel::create(const TrainConfig& config, int vocab_size) {
  return create(vocab_size, config.embed_dim, config.k_edge, config.seed);
}

SequenceForward forward_sequence(const CrihpModel& model, const EventSequence& seq,
                                 const ForwardOptions& options) {
  if (seq.empty()) throw ValidationError("forward pass over an empty sequence");
  SequenceForward out;
  out.embedding = embed_events(seq, model.params);
  const auto n = static_cast<Eigen::Index>(seq.size());
  out.front = options.use_front_graph ? build_front_graph(seq.times, options.sigma)
                                      : identity_front_graph(n);
  if (n >= 2) {
    const diff::Var h_fro = front_gcn(out.embedding, out.front, model.params);
    const EncoderState state = message_passing(h_fro, out.front, model.params);
    out.posterior = infer_edge_posterior(state, model.params);
    if (options.mode == RelationMode::Sample) {
      out.relation = sample_relation_graph(*out.posterior, options.temperature, options.seed, options.hard);
    } else {
      out.relation = argmax_relation_graph(*out.posterior, options.straight_through);
    }
  }
  out.hidden = decode(out.embedding, out.relation, model.params);
  return out;
}

ForwardOptions training_options(const TrainConfig& config, double temperature, std::uint64_t seed) {
  ForwardOptions o;
  o.mode = config.use_lvm ? RelationMode::Sample : RelationMode::Argmax;
  o.straight_through = !config.use_lvm;
  o.temperature = temperature;
  o.hard = config.gumbel_hard;
  o.use_front_graph = config.use_front_graph;
  if (config.front_sigma > 0.0) o.sigma = config.front_sigma;
  o.seed = seed;
  return o;
}

ForwardOptions evaluation_options(const TrainConfig& config) {
  ForwardOptions o;
  o.mode = RelationMode::Argmax;
  o.use_front_graph = config.use_front_graph;
  if (config.front_sigma > 0.0) o.sigma = config.front_sigma;
  return o;
}

}  // namespace crihp
