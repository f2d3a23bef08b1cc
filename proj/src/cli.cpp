#include "crihp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"
#include "crihp/train_eval.hpp"

namespace crihp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSynopsis =
    "usage: crihp <command> [options]\n"
    "  gen-data  --types E --sequences N --horizon T --seed S --out d.jsonl [--params p.json] [--split a,b,c]\n"
    "  train     [--config c.json] [--seed S] [--epochs N] [--train f] [--val f] [--out dir] [--set key=value]...\n"
    "  eval      --checkpoint best.ckpt --data test.jsonl [--truth d.truth.json]\n"
    "  predict   --checkpoint best.ckpt --data test.jsonl [--out preds.csv]\n"
    "  infer     --checkpoint best.ckpt --data test.jsonl [--sequence i]\n"
    "  otd       --a paths_a.jsonl --b paths_b.jsonl [--del-cost C]\n"
    "  gradcheck [--config c.json] [--seed S]\n";

struct UsageError : Error {
  using Error::Error;
};

fs::path stem_path(const fs::path& p) { return p.parent_path() / p.stem(); }

fs::path sidecar_for(const fs::path& data) { return fs::path(stem_path(data).string() + ".truth.json"); }

/// `d.test.jsonl` looks for `d.test.truth.json`, then `d.truth.json`.
std::optional<fs::path> find_sidecar(const fs::path& data) {
  fs::path stem = stem_path(data);
  while (!stem.filename().empty()) {
    const fs::path candidate(stem.string() + ".truth.json");
    if (fs::exists(candidate)) return candidate;
    if (!stem.has_extension()) break;
    stem = stem.parent_path() / stem.stem();
  }
  return std::nullopt;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  json doc = json::parse(config.to_json());
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (!doc.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  json value = json::parse(raw, nullptr, false);
  doc[key] = value.is_discarded() ? json(raw) : value;
  config = TrainConfig::from_json(doc.dump());
}

int gen_data(int types, std::size_t sequences, double horizon, std::uint64_t seed, const fs::path& out,
             const std::string& params_path, const std::string& split_spec) {
  HawkesParams params;
  if (params_path.empty()) {
    params = random_hawkes_params(types, seed);
  } else {
    params = read_truth_sidecar(params_path).params;
    if (params.types() != types) {
      throw ValidationError("--params describes " + std::to_string(params.types()) + " types, --types is " +
                            std::to_string(types));
    }
  }
  params.validate();
  Dataset ds;
  ds.vocab_size = types;
  for (std::size_t s = 0; s < sequences; ++s) ds.sequences.push_back(simulate(params, horizon, hash_combine(seed, s)));

  write_sequences(out, ds);
  write_truth_sidecar(sidecar_for(out), params);
  std::cerr << "wrote " << ds.size() << " sequences (" << ds.event_count() << " events) to " << out.string()
            << '\n';
  if (!split_spec.empty()) {
    std::array<double, 3> ratios{};
    std::stringstream in(split_spec);
    std::string part;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!std::getline(in, part, ',')) throw UsageError("--split expects three comma-separated ratios");
      ratios[k] = std::stod(part);
    }
    const auto [tr, va, te] = split(ds, ratios, seed);
    const std::string stem = stem_path(out).string();
    write_sequences(stem + ".train.jsonl", tr);
    write_sequences(stem + ".val.jsonl", va);
    write_sequences(stem + ".test.jsonl", te);
  }
  return 0;
}

int train_cmd(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> epochs,
              std::string train_path, std::string val_path, std::string out_dir,
              const std::vector<std::string>& overrides) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
  for (const auto& o : overrides) apply_override(config, o);
  if (seed) config.seed = *seed;
  if (epochs) config.epochs = *epochs;
  if (!train_path.empty()) config.train_data = train_path;
  if (!val_path.empty()) config.val_data = val_path;
  if (!out_dir.empty()) config.output_dir = out_dir;
  config.validate();
  if (config.train_data.empty()) throw UsageError("no training data: pass --train or set train_data");

  const std::optional<int> vocab = config.vocab_size > 0 ? std::optional<int>(config.vocab_size) : std::nullopt;
  Dataset train_set = parse_sequences(config.train_data, vocab);
  Dataset val_set;
  if (!config.val_data.empty()) {
    val_set = parse_sequences(config.val_data, vocab);
  } else {
    auto [tr, va, te] = split(train_set, {0.9, 0.1, 0.0}, config.seed);
    train_set = std::move(tr);
    val_set = std::move(va);
  }
  const TrainResult result = train(config, train_set, val_set);

  const fs::path dir = config.output_dir.empty() ? fs::path(".") : fs::path(config.output_dir);
  fs::create_directories(dir);
  save_model(dir / "best.ckpt", result.best, result.config);
  auto log = open_out(dir / "train_log.csv");
  write_log_csv(log, result.log);
  std::cerr << "best validation nll " << result.best_val_nll << " (initial " << result.initial_val_nll
            << "); checkpoint " << (dir / "best.ckpt").string() << '\n';
  return 0;
}

int eval_cmd(const fs::path& checkpoint, const fs::path& data, const std::string& truth_path) {
  const LoadedModel loaded = load_model(checkpoint);
  const Dataset ds = parse_sequences(data, loaded.model.vocab_size);
  std::optional<GroundTruthGraph> truth;
  std::optional<fs::path> sidecar = truth_path.empty() ? find_sidecar(data) : std::optional<fs::path>(truth_path);
  if (sidecar) truth = read_truth_sidecar(*sidecar).graph;
  write_metrics_csv(std::cout, evaluate(loaded.model, ds, loaded.config, truth));
  return 0;
}

int predict_cmd(const fs::path& checkpoint, const fs::path& data, const std::string& out_path) {
  const LoadedModel loaded = load_model(checkpoint);
  const Dataset ds = parse_sequences(data, loaded.model.vocab_size);
  const auto rows = predict_dataset(loaded.model, ds, loaded.config);
  std::ofstream file;
  if (!out_path.empty()) file = open_out(out_path);
  std::ostream& out = out_path.empty() ? std::cout : file;
  out << "sequence_id,position,true_mark,pred_mark,true_dt,pred_dt\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.sequence_id << ',' << r.position << ',' << r.true_mark << ',' << r.pred_mark << ',' << r.true_dt
        << ',' << r.pred_dt << '\n';
  }
  return 0;
}

int infer_cmd(const fs::path& checkpoint, const fs::path& data, std::optional<std::size_t> only) {
  const LoadedModel loaded = load_model(checkpoint);
  const Dataset ds = parse_sequences(data, loaded.model.vocab_size);
  if (only && *only >= ds.size()) {
    throw ValidationError("--sequence " + std::to_string(*only) + " out of range (" + std::to_string(ds.size()) +
                          " sequences)");
  }
  const auto options = evaluation_options(loaded.config);
  for (std::size_t s = 0; s < ds.size(); ++s) {
    if (only && s != *only) continue;
    const EventSequence& seq = ds.sequences[s];
    const auto n = static_cast<Eigen::Index>(seq.size());
    const int k = loaded.model.k_edge;
    std::vector<double> probs;
    probs.reserve(static_cast<std::size_t>(n * n * k));
    std::optional<RelationPosterior> post;
    if (n >= 2) post = forward_sequence(loaded.model, seq, options).posterior;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        for (int e = 0; e < k; ++e) {
          probs.push_back(post ? post->prob(i, j, e) : (e == kNoEdge ? 1.0 : 0.0));
        }
      }
    }
    json row;
    row["sequence_id"] = s;
    row["n"] = n;
    row["K_edge"] = k;
    row["probs"] = probs;
    std::cout << row.dump() << '\n';
  }
  return 0;
}

std::vector<PrototypePath> read_paths(const fs::path& path) {
  std::vector<PrototypePath> out;
  for (const auto& seq : parse_sequences(path).sequences) out.push_back(whole_sequence_path(seq));
  return out;
}

int otd_cmd(const fs::path& a, const fs::path& b, std::optional<double> del_cost) {
  const auto pa = read_paths(a);
  const auto pb = read_paths(b);
  double cost = 0.0;
  if (del_cost) {
    cost = *del_cost;
  } else {
    Dataset both = parse_sequences(a);
    for (auto& s : parse_sequences(b).sequences) both.sequences.push_back(std::move(s));
    cost = both.mean_inter_event_gap();
  }
  std::cout << std::setprecision(12);
  for (const auto& x : pa) {
    for (std::size_t j = 0; j < pb.size(); ++j) std::cout << (j ? "," : "") << otd_distance(x, pb[j], cost);
    std::cout << '\n';
  }
  return 0;
}

int gradcheck_cmd(const std::string& config_path, std::optional<std::uint64_t> seed) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
  if (seed) config.seed = *seed;
  const int types = config.vocab_size > 0 ? config.vocab_size : 3;
  const Dataset toy = toy_dataset(types, 6, config.seed);
  const auto report = elbo_gradient_check(config, toy);
  for (const auto& e : report.entries) {
    std::cout << e.name << ',' << std::setprecision(6) << e.max_rel_error << '\n';
  }
  std::cout << "max_rel_error," << report.max_rel_error << '\n';
  return report.passed ? 0 : 1;
}

}  // namespace

int cli(int argc, char** argv) {
  CLI::App app{"Contrastive relational inference for marked event sequences", "crihp"};
  app.require_subcommand(1);

  int types = 0;
  std::size_t sequences = 0;
  double horizon = 0.0;
  std::uint64_t data_seed = 0;
  std::string out, params_path, split_spec;
  auto* gen = app.add_subcommand("gen-data", "simulate a multivariate Hawkes dataset");
  gen->add_option("--types", types)->required()->check(CLI::PositiveNumber);
  gen->add_option("--sequences", sequences)->required()->check(CLI::PositiveNumber);
  gen->add_option("--horizon", horizon)->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", data_seed)->required();
  gen->add_option("--out", out)->required();
  gen->add_option("--params", params_path, "sidecar-format JSON with mu, alpha and beta");
  gen->add_option("--split", split_spec, "train,val,test ratios");

  std::string config_path, train_path, val_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::vector<std::string> overrides;
  auto* tr = app.add_subcommand("train", "fit a model and write best.ckpt and train_log.csv");
  tr->add_option("--config", config_path);
  tr->add_option("--seed", seed);
  tr->add_option("--epochs", epochs);
  tr->add_option("--train", train_path);
  tr->add_option("--val", val_path);
  tr->add_option("--out", out_dir);
  tr->add_option("--set", overrides, "override a config key (JSON value)");

  std::string checkpoint, data, truth_path;
  auto* ev = app.add_subcommand("eval", "print acc,rmse,relation_auc,nll");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--truth", truth_path);

  auto* pr = app.add_subcommand("predict", "one-step-ahead predictions as CSV");
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--data", data)->required();
  pr->add_option("--out", out);

  std::optional<std::size_t> only;
  auto* inf = app.add_subcommand("infer", "relation posteriors as JSON Lines");
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--data", data)->required();
  inf->add_option("--sequence", only);

  std::string a, b;
  std::optional<double> del_cost;
  auto* ot = app.add_subcommand("otd", "pairwise prototype-path distances as CSV");
  ot->add_option("--a", a)->required();
  ot->add_option("--b", b)->required();
  ot->add_option("--del-cost", del_cost);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training loss");
  gc->add_option("--config", config_path);
  gc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "crihp: " << e.what() << '\n' << kSynopsis;
    return 1;
  }

  try {
    if (*gen) return gen_data(types, sequences, horizon, data_seed, out, params_path, split_spec);
    if (*tr) return train_cmd(config_path, seed, epochs, train_path, val_path, out_dir, overrides);
    if (*ev) return eval_cmd(checkpoint, data, truth_path);
    if (*pr) return predict_cmd(checkpoint, data, out);
    if (*inf) return infer_cmd(checkpoint, data, only);
    if (*ot) return otd_cmd(a, b, del_cost);
    if (*gc) return gradcheck_cmd(config_path, seed);
  } catch (const UsageError& e) {
    std::cerr << "crihp: " << e.what() << '\n' << kSynopsis;
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "crihp: numerical error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "crihp: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "crihp: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "crihp: invalid number: " << e.what() << '\n' << kSynopsis;
    return 1;
  }
  std::cerr << kSynopsis;
  return 1;
}

}  // namespace crihp
