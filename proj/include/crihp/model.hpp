#pragma once

#include <cstdint>
#include <optional>

#include "crihp/config.hpp"
#include "crihp/diff_core.hpp"
#include "crihp/event_core.hpp"
#include "crihp/front_graph.hpp"
#include "crihp/nri_encoder.hpp"
#include "crihp/tpp_decoder.hpp"

namespace crihp {

/// Encoder + decoder parameters for one vocabulary.
struct CrihpModel {
  int vocab_size = 0;
  int embed_dim = 0;
  int k_edge = 0;
  diff::ParamStore params;

  static CrihpModel create(int vocab_size, int embed_dim, int k_edge, std::uint64_t init_seed);
  static CrihpModel create(const TrainConfig& config, int vocab_size);
};

enum class RelationMode {
  Sample,  // Gumbel-softmax draw (training)
  Argmax,  // deterministic one-hot of the posterior (evaluation)
};

struct ForwardOptions {
  RelationMode mode = RelationMode::Argmax;
  double temperature = 1.0;
  bool hard = false;              // hard Gumbel samples (Sample mode)
  bool straight_through = false;  // Argmax mode: pass posterior gradients through
  bool use_front_graph = true;
  std::optional<double> sigma;    // empty: automatic bandwidth
  std::uint64_t seed = 0;
};

struct SequenceForward {
  diff::Var embedding;
  FrontGraph front;
  std::optional<RelationPosterior> posterior;  // empty when n < 2
  std::optional<RelationGraph> relation;
  DecoderHidden hidden;
};

/// Embedding -> front graph -> encoder -> relation graph -> decoder.
SequenceForward forward_sequence(const CrihpModel& model, const EventSequence& seq,
                                 const ForwardOptions& options);

ForwardOptions training_options(const TrainConfig& config, double temperature, std::uint64_t seed);
ForwardOptions evaluation_options(const TrainConfig& config);

}  // namespace crihp
