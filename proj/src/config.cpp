#include "crihp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"

namespace crihp {

using nlohmann::json;

namespace {

std::string kind_name(PrototypeKind k) { return k == PrototypeKind::Recurrent ? "recurrent" : "decoder"; }

PrototypeKind kind_from(const std::string& s) {
  if (s == "recurrent") return PrototypeKind::Recurrent;
  if (s == "decoder") return PrototypeKind::Decoder;
  throw ValidationError("prototype_model must be 'recurrent' or 'decoder', got '" + s + "'");
}

// Visits every field with its JSON key; keeps to_json/from_json in sync.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("embed_dim", c.embed_dim);
  f("k_edge", c.k_edge);
  f("vocab_size", c.vocab_size);
  f("front_sigma", c.front_sigma);
  f("gumbel_temp_start", c.gumbel_temp_start);
  f("gumbel_temp_end", c.gumbel_temp_end);
  f("gumbel_hard", c.gumbel_hard);
  f("mc_samples", c.mc_samples);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("learning_rate", c.learning_rate);
  f("clip_norm", c.clip_norm);
  f("seed", c.seed);
  f("max_length", c.max_length);
  f("beta_kl", c.beta_kl);
  f("beta_cri", c.beta_cri);
  f("tau", c.tau);
  f("quantile_q", c.quantile_q);
  f("n_pt_cap", c.n_pt_cap);
  f("del_cost", c.del_cost);
  f("prototype_epochs", c.prototype_epochs);
  f("prototype_hidden", c.prototype_hidden);
  f("integration_grid", c.integration_grid);
  f("horizon_factor", c.horizon_factor);
  f("use_lvm", c.use_lvm);
  f("use_front_graph", c.use_front_graph);
  f("use_cri", c.use_cri);
  f("use_prototype_search", c.use_prototype_search);
  f("include_positive_in_denominator", c.include_positive_in_denominator);
  f("train_data", c.train_data);
  f("val_data", c.val_data);
  f("output_dir", c.output_dir);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("config: ") + what);
  };
  positive(embed_dim > 0, "embed_dim must be positive");
  positive(k_edge >= 2 && k_edge <= 4, "k_edge must be in [2, 4]");
  positive(vocab_size >= 0, "vocab_size must be non-negative");
  positive(front_sigma >= 0.0, "front_sigma must be non-negative (0 = automatic)");
  positive(gumbel_temp_start > 0.0 && gumbel_temp_end > 0.0, "Gumbel temperatures must be positive");
  positive(mc_samples > 0, "mc_samples must be positive");
  positive(batch_size > 0, "batch_size must be positive");
  positive(!(use_cri && batch_size < 2), "batch_size must be at least 2 when use_cri is on");
  positive(epochs >= 0, "epochs must be non-negative");
  positive(learning_rate > 0.0, "learning_rate must be positive");
  positive(max_length >= 0, "max_length must be non-negative");
  positive(beta_kl >= 0.0 && beta_cri >= 0.0, "loss weights must be non-negative");
  positive(tau > 0.0, "tau must be positive");
  positive(quantile_q > 0.0 && quantile_q <= 1.0, "quantile_q must be in (0, 1]");
  positive(n_pt_cap > 0, "n_pt_cap must be positive");
  positive(del_cost >= 0.0, "del_cost must be non-negative (0 = automatic)");
  positive(prototype_epochs >= 0, "prototype_epochs must be non-negative");
  positive(prototype_hidden > 0, "prototype_hidden must be positive");
  positive(integration_grid >= 2, "integration_grid must be at least 2");
  positive(horizon_factor > 0.0, "horizon_factor must be positive");
}

std::string TrainConfig::to_json() const {
  json j;
  visit_fields(*this, [&](const char* key, const auto& v) { j[key] = v; });
  j["prototype_model"] = kind_name(prototype_model);
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  TrainConfig c;
  std::set<std::string> known{"prototype_model"};
  visit_fields(c, [&](const char* key, auto& v) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(v);
    } catch (const json::exception&) {
      throw ValidationError(std::string("config: bad value for '") + key + "'");
    }
  });
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");
  }
  if (j.contains("prototype_model")) {
    if (!j["prototype_model"].is_string()) throw ValidationError("config: prototype_model must be a string");
    c.prototype_model = kind_from(j["prototype_model"].get<std::string>());
  }
  c.validate();
  return c;
}

std::uint64_t TrainConfig::architecture_hash() const {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(embed_dim));
  h = hash_combine(h, static_cast<std::uint64_t>(k_edge));
  h = hash_combine(h, static_cast<std::uint64_t>(vocab_size));
  return h;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return TrainConfig::from_json(buf.str());
}

}  // namespace crihp
