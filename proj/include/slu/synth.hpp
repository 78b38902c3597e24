// SPDX-License-Identifier: Apache-2.0
//
// Template-grammar corpus generator.
//
// A template is a space-separated token pattern in which "{type}" is a slot
// placeholder, e.g. "book a flight to {to_city}". Each placeholder is filled
// with an entry (one or more tokens) of the type's lexicon and labelled
// B-<label> I-<label> ..., where <label> is the type itself unless
// label_alias renames it.
//
// Lexicon sharing: for a type with a shared pool, the first
// round(shared_lexicon_fraction * |own|) lexicon slots are taken from the
// pool instead of the domain's own list. Domains handed the same pool then
// overlap in exactly those entries.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slu/data.hpp"
#include "slu/rng.hpp"

namespace slu::synth {

using Lexicon = std::vector<std::string>;  // entries, tokens separated by spaces

struct GrammarSpec {
  std::string domain;
  std::vector<std::string> templates;
  std::map<std::string, Lexicon> lexicons;
  std::map<std::string, Lexicon> shared_lexicons;
  std::map<std::string, std::string> label_alias;
  double shared_lexicon_fraction = 0.0;

  /// Throws ConfigError: no templates, placeholder without lexicon, empty
  /// lexicon or entry, fraction outside [0, 1], or two types aliased to the
  /// same label.
  void validate() const;
  /// Lexicon actually sampled for `type` after applying the sharing rule.
  Lexicon effective_lexicon(const std::string& type) const;
};

/// n utterances; template and entries drawn uniformly.
std::vector<data::Utterance> generate(const GrammarSpec& spec, std::size_t n, Rng& rng);

struct DomainPlan {
  GrammarSpec spec;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

struct SuitePlan {
  std::vector<DomainPlan> domains;
};

struct Corpus {
  std::string domain;
  std::vector<data::Utterance> train;
  std::vector<data::Utterance> test;
};

/// Four domains: flights and trains share city, date and time lexicons and
/// differ in one aliased slot; restaurants and movies share no lexicon with
/// anything.
SuitePlan standard_suite_plan(std::uint64_t seed);
/// Generate every domain of a plan; domain i uses rng streams 2i (train)
/// and 2i+1 (test) of `seed`.
std::vector<Corpus> realize(const SuitePlan& plan, std::uint64_t seed);
inline std::vector<Corpus> standard_suite(std::uint64_t seed) { return realize(standard_suite_plan(seed), seed); }

/// JSON plan: {"schema_version": 1, "domains": [{"domain", "templates",
/// "lexicons", "shared_lexicons"?, "label_alias"?, "shared_lexicon_fraction"?,
/// "train", "test"}]}. Unknown keys are rejected.
SuitePlan parse_plan(const std::string& json_text, const std::string& source_name = "spec");
std::string plan_to_json(const SuitePlan& plan);

/// Writes <domain>.train.bio and <domain>.test.bio per corpus and a
/// manifest.json with utterance counts and SHA-256 per file. Returns the
/// manifest text.
std::string write_suite(const std::filesystem::path& dir, const std::vector<Corpus>& corpora, std::uint64_t seed);

}  // namespace slu::synth
