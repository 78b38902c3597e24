// SPDX-License-Identifier: Apache-2.0
//
// BIO corpora, vocabularies and padded mini-batches.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slu/rng.hpp"

namespace slu::data {

struct Utterance {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;  // BIO, same length as tokens
  std::string domain;

  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// "O", "B-<type>" or "I-<type>" with a non-empty type.
bool is_bio_label(std::string_view label);

struct ReadOptions {
  /// Columns are "<label> <token>" (MIT corpus layout) instead of
  /// "<token> <label>".
  bool label_first = false;
};

/// One token per line, "<token><TAB or space><label>", blank line between
/// utterances. Throws ParseError with path and line number.
std::vector<Utterance> read_bio(const std::filesystem::path& path, const std::string& domain,
                                const ReadOptions& options = {});
std::vector<Utterance> parse_bio(std::istream& in, const std::string& domain, const std::string& source_name,
                                 const ReadOptions& options = {});

/// token TAB label per line, a blank line after every utterance.
void write_bio(std::ostream& out, std::span<const Utterance> utterances);
void write_bio(const std::filesystem::path& path, std::span<const Utterance> utterances);

/// Token-only blocks for prediction. The first whitespace-separated field of
/// each line is the token; extra columns are ignored. Each empty block (a run
/// of blank lines between utterances) is reported through `skipped`.
std::vector<std::vector<std::string>> read_token_blocks(std::istream& in, std::size_t* skipped = nullptr);

/// Bidirectional string <-> dense id table in insertion order.
class IdMap {
 public:
  std::size_t add(const std::string& name);
  std::optional<std::size_t> find(const std::string& name) const;
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct Vocabulary {
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr int kFormatVersion = 1;

  IdMap words;
  IdMap labels;
  IdMap domains;

  Vocabulary();

  /// UNK for unknown words.
  std::size_t word_id(const std::string& word) const;
  std::size_t label_id(const std::string& label) const;  // DataError if unknown
  std::size_t domain_id(const std::string& domain) const;  // DataError if unknown

  /// Versioned text dump, entries listed by id.
  std::string dump() const;
  static Vocabulary parse(const std::string& text);

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Words, labels and domains in first-occurrence order. Throws ConfigError
/// on empty input.
Vocabulary build_vocab(std::span<const Utterance> utterances);

/// Copy of `vocab` whose label table is rebuilt from `utterances` only.
Vocabulary restrict_labels(const Vocabulary& vocab, std::span<const Utterance> utterances);

struct Batch {
  std::size_t size = 0;     // B
  std::size_t max_len = 0;  // T_max
  std::vector<std::size_t> words;   // B * T_max, PAD in padded cells
  std::vector<std::size_t> labels;  // B * T_max, 0 in padded cells
  std::vector<std::uint8_t> mask;   // B * T_max
  std::vector<std::size_t> lengths; // B
  std::vector<std::size_t> domains; // B
  std::vector<std::size_t> source;  // index of each row in the input list

  std::size_t at(std::size_t row, std::size_t t) const { return row * max_len + t; }
};

struct BatchOptions {
  std::size_t batch_size = 16;
  bool shuffle = false;
  /// Probability of replacing each occurrence of a word that appears once
  /// in the input list by UNK. 0 disables it (evaluation).
  double singleton_unk_prob = 0.0;
  /// Look up gold label and domain ids. When false, labels are 0 and unknown
  /// domains map to 0, so unlabelled or foreign corpora can be encoded for
  /// prediction.
  bool with_labels = true;
};

/// Encode and pad. Unknown words map to UNK; unknown labels or domains throw
/// DataError naming the utterance index. The last short batch is kept.
std::vector<Batch> encode_and_batch(std::span<const Utterance> utterances, const Vocabulary& vocab,
                                    const BatchOptions& options, Rng& rng);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};

/// Deterministic per-domain dev split: each domain with two or more
/// utterances contributes ceil(fraction * n) of them, chosen by shuffling.
/// Indices are returned in ascending order.
Split split_dev(std::span<const Utterance> utterances, double fraction, Rng& rng);

std::vector<Utterance> gather(std::span<const Utterance> utterances, std::span<const std::size_t> indices);

}  // namespace slu::data
