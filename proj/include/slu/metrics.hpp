// SPDX-License-Identifier: Apache-2.0
//
// conlleval-style chunk scoring.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slu/data.hpp"

namespace slu::eval {

struct Chunk {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::size_t utterance = 0;

  friend auto operator<=>(const Chunk&, const Chunk&) = default;
};

/// Maximal B/I runs. An I- tag that does not continue an open chunk of the
/// same type opens a new chunk (conlleval's lenient rule).
std::vector<Chunk> extract_chunks(std::span<const std::string> labels, std::size_t utterance = 0);

struct Counts {
  std::size_t utterances = 0;
  std::size_t tokens = 0;
  std::size_t correct_tokens = 0;
  std::size_t gold_chunks = 0;
  std::size_t predicted_chunks = 0;
  std::size_t correct_chunks = 0;

  Counts& operator+=(const Counts& o);
};

/// Percentages rounded to two decimals.
struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double token_accuracy = 0.0;
};

Scores score(const Counts& c);

/// Per-utterance chunk counts. Throws ContractError naming the utterance
/// when the counts or lengths differ.
Counts count_chunks(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted);

/// Micro-averaged P/R/F1 over all utterances.
Scores chunk_f1(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted);

struct EvalReport {
  static constexpr const char* kCombined = "combined";

  std::map<std::string, Counts> counts;  // per domain, plus "combined" (micro over pooled utterances)
  std::optional<double> probe_accuracy;

  Scores scores(const std::string& domain) const { return score(counts.at(domain)); }
  double f1(const std::string& domain = kCombined) const { return scores(domain).f1; }
};

EvalReport evaluate(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted);

/// Key-value text, one "[domain]" block per domain in name order and the
/// combined block last.
std::string format_report(const EvalReport& report);

}  // namespace slu::eval
