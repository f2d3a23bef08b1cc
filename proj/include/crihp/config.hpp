#pragma once

#include <cstdint>
#include <string>

namespace crihp {

enum class PrototypeKind { Recurrent, Decoder };

/// Every tunable of the model, training loop and evaluation. Serialized as a
/// flat JSON object; unknown keys are rejected on load.
struct TrainConfig {
  // architecture
  int embed_dim = 32;
  int k_edge = 2;
  int vocab_size = 0;  // 0: taken from the training data
  double front_sigma = 0.0;  // 0: per-sequence automatic bandwidth

  // relation sampling
  double gumbel_temp_start = 1.0;
  double gumbel_temp_end = 0.3;
  bool gumbel_hard = false;

  // optimization
  int mc_samples = 8;
  int batch_size = 16;
  int epochs = 200;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int max_length = 0;  // 0: no truncation

  // objective
  double beta_kl = 1.0;
  double beta_cri = 0.1;
  double tau = 0.5;

  // prototype search
  double quantile_q = 0.5;
  int n_pt_cap = 6;
  double del_cost = 0.0;  // 0: mean inter-event gap of the training data
  PrototypeKind prototype_model = PrototypeKind::Recurrent;
  int prototype_epochs = 20;
  int prototype_hidden = 16;

  // evaluation
  int integration_grid = 1024;
  double horizon_factor = 10.0;  // prediction window = factor * mean gap

  // ablations
  bool use_lvm = true;
  bool use_front_graph = true;
  bool use_cri = true;
  bool use_prototype_search = true;
  bool include_positive_in_denominator = false;

  // paths (CLI convenience)
  std::string train_data;
  std::string val_data;
  std::string output_dir;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  /// Stable hash of the architecture-relevant fields (stored in checkpoints).
  std::uint64_t architecture_hash() const;
};

TrainConfig load_config(const std::string& path);

}  // namespace crihp
