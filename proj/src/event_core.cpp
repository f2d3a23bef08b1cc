#include "crihp/event_core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "crihp/errors.hpp"
#include "crihp/rng.hpp"

namespace crihp {

using nlohmann::json;

EventSequence EventSequence::prefix(std::size_t count) const {
  if (count >= size()) return *this;
  EventSequence out;
  out.marks.assign(marks.begin(), marks.begin() + static_cast<std::ptrdiff_t>(count));
  out.times.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(count));
  out.horizon = times[count];
  return out;
}

void EventSequence::validate(std::optional<int> vocab_size) const {
  if (marks.size() != times.size()) {
    throw ValidationError("marks and times differ in length (" + std::to_string(marks.size()) +
                          " vs " + std::to_string(times.size()) + ")");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ValidationError("horizon T must be positive and finite");
  }
  double prev = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!std::isfinite(t)) throw ValidationError("time " + std::to_string(i) + " is not finite");
    if (!(t > prev)) {
      throw ValidationError("times must be strictly increasing and positive (index " +
                            std::to_string(i) + ")");
    }
    if (!(t < horizon)) {
      throw ValidationError("time " + std::to_string(i) + " is not below horizon T");
    }
    prev = t;
  }
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i] < 0 || (vocab_size && marks[i] >= *vocab_size)) {
      throw ValidationError("mark " + std::to_string(marks[i]) + " at index " + std::to_string(i) +
                            " is outside the vocabulary");
    }
  }
}

std::size_t Dataset::event_count() const noexcept {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  return total;
}

double Dataset::mean_inter_event_gap() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    double prev = 0.0;
    for (double t : s.times) {
      sum += t - prev;
      prev = t;
      ++count;
    }
  }
  return count == 0 ? 1.0 : sum / static_cast<double>(count);
}

namespace {

EventSequence sequence_from_json(const json& record, std::size_t line) {
  if (!record.is_object()) throw FormatError(line, "record is not a JSON object");
  for (const char* key : {"marks", "times", "T"}) {
    if (!record.contains(key)) throw FormatError(line, std::string("missing key '") + key + "'");
  }
  for (const auto& [key, _] : record.items()) {
    if (key != "marks" && key != "times" && key != "T") {
      throw FormatError(line, "unexpected key '" + key + "'");
    }
  }
  const auto& marks = record["marks"];
  const auto& times = record["times"];
  if (!marks.is_array() || !times.is_array()) throw FormatError(line, "marks/times must be arrays");
  if (!record["T"].is_number()) throw FormatError(line, "T must be a number");

  EventSequence seq;
  seq.horizon = record["T"].get<double>();
  seq.marks.reserve(marks.size());
  seq.times.reserve(times.size());
  for (const auto& m : marks) {
    if (!m.is_number_integer()) throw FormatError(line, "marks must be integers");
    seq.marks.push_back(m.get<int>());
  }
  for (const auto& t : times) {
    if (!t.is_number()) throw FormatError(line, "times must be numbers");
    seq.times.push_back(t.get<double>());
  }
  return seq;
}

}  // namespace

Dataset parse_sequences_text(const std::string& text, std::optional<int> vocab_size,
                             const std::string& source) {
  Dataset out;
  out.name = source;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  int max_mark = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, std::string("malformed JSON: ") + e.what());
    }
    EventSequence seq = sequence_from_json(record, line_no);
    try {
      seq.validate(vocab_size);
    } catch (const ValidationError& e) {
      throw ValidationError(source + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    for (int m : seq.marks) max_mark = std::max(max_mark, m);
    out.sequences.push_back(std::move(seq));
  }
  out.vocab_size = vocab_size.value_or(std::max(1, max_mark + 1));
  return out;
}

Dataset parse_sequences(const std::filesystem::path& path, std::optional<int> vocab_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  Dataset ds = parse_sequences_text(buf.str(), vocab_size, path.string());
  ds.name = path.stem().string();
  return ds;
}

std::string format_sequence(const EventSequence& seq) {
  json record;
  record["marks"] = seq.marks;
  record["times"] = seq.times;
  record["T"] = seq.horizon;
  return record.dump();
}

void write_sequences(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& seq : dataset.sequences) out << format_sequence(seq) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, std::array<double, 3> ratios,
                                            std::uint64_t seed) {
  if (dataset.sequences.empty()) throw ValidationError("cannot split an empty dataset");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

  const std::size_t n = dataset.size();
  const auto val_n = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  const auto test_n = static_cast<std::size_t>(std::llround(ratios[2] * static_cast<double>(n)));
  if (val_n + test_n > n) throw ValidationError("split ratios leave no room for training data");

  const auto order = permutation(n, seed);
  std::array<Dataset, 3> parts;
  for (auto& p : parts) p.vocab_size = dataset.vocab_size;
  parts[0].name = dataset.name + ".train";
  parts[1].name = dataset.name + ".val";
  parts[2].name = dataset.name + ".test";
  const std::size_t train_n = n - val_n - test_n;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t part = k < train_n ? 0 : (k < train_n + val_n ? 1 : 2);
    parts[part].sequences.push_back(dataset.sequences[order[k]]);
  }
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Batch b;
  b.indices = indices;
  for (std::size_t idx : indices) {
    b.sequences.push_back(dataset.sequences.at(idx));
    b.pad_length = std::max(b.pad_length, dataset.sequences[idx].size());
  }
  for (const auto& seq : b.sequences) {
    std::vector<bool> m(b.pad_length, false);
    std::vector<int> marks(b.pad_length, 0);
    std::vector<double> times(b.pad_length, 0.0);
    for (std::size_t j = 0; j < seq.size(); ++j) {
      m[j] = true;
      marks[j] = seq.marks[j];
      times[j] = seq.times[j];
    }
    b.mask.push_back(std::move(m));
    b.padded_marks.push_back(std::move(marks));
    b.padded_times.push_back(std::move(times));
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  std::vector<std::size_t> order;
  if (shuffle) {
    order = permutation(dataset.size(), seed);
  } else {
    order.resize(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
    batches.push_back(make_batch(dataset, idx));
  }
  return batches;
}

}  // namespace crihp
