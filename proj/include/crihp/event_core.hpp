#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace crihp {

/// Marked events e_i@t_i observed on [0, T].
///
/// Times are strictly increasing and lie in (0, T); marks are indices into
/// a vocabulary of size E owned by the enclosing Dataset.
struct EventSequence {
  std::vector<int> marks;
  std::vector<double> times;
  double horizon = 0.0;

  std::size_t size() const noexcept { return marks.size(); }
  bool empty() const noexcept { return marks.empty(); }

  /// First `count` events; the horizon becomes the time of the first dropped
  /// event (or stays T when nothing is dropped).
  EventSequence prefix(std::size_t count) const;

  /// Throws ValidationError naming the first violated invariant.
  void validate(std::optional<int> vocab_size = std::nullopt) const;

  bool operator==(const EventSequence&) const = default;
};

struct Dataset {
  std::vector<EventSequence> sequences;
  int vocab_size = 0;
  std::string name;

  std::size_t size() const noexcept { return sequences.size(); }
  std::size_t event_count() const noexcept;
  /// Mean of t_i - t_{i-1} (t_0 = 0) over all events; 1.0 for an event-free dataset.
  double mean_inter_event_gap() const;
};

/// Fixed-count group of sequences padded to a common length. Padded slots
/// hold mark 0 / time 0 and are flagged false in `mask`.
struct Batch {
  std::vector<EventSequence> sequences;
  std::vector<std::size_t> indices;  // positions in the source dataset
  std::size_t pad_length = 0;
  std::vector<std::vector<bool>> mask;
  std::vector<std::vector<int>> padded_marks;
  std::vector<std::vector<double>> padded_times;

  std::size_t size() const noexcept { return sequences.size(); }
};

Dataset parse_sequences(const std::filesystem::path& path,
                        std::optional<int> vocab_size = std::nullopt);

/// Parses JSON Lines text; `source` only labels error messages.
Dataset parse_sequences_text(const std::string& text, std::optional<int> vocab_size = std::nullopt,
                             const std::string& source = "<memory>");

void write_sequences(const std::filesystem::path& path, const Dataset& dataset);
std::string format_sequence(const EventSequence& seq);

std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, std::array<double, 3> ratios,
                                            std::uint64_t seed);

std::vector<Batch> make_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace crihp
