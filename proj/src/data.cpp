// SPDX-License-Identifier: Apache-2.0

#include "slu/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "slu/error.hpp"

namespace slu::data {

namespace {

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

// Splits "<a><TAB><b>" or "<a><SPACE><b>" into exactly two non-empty fields.
std::optional<std::pair<std::string, std::string>> split_two(const std::string& line) {
  const char sep = line.find('\t') != std::string::npos ? '\t' : ' ';
  const auto pos = line.find(sep);
  if (pos == std::string::npos) return std::nullopt;
  std::string a = line.substr(0, pos);
  std::string b = line.substr(pos + 1);
  if (a.empty() || b.empty() || b.find(sep) != std::string::npos) return std::nullopt;
  return std::make_pair(std::move(a), std::move(b));
}

}  // namespace

bool is_bio_label(std::string_view label) {
  if (label == "O") return true;
  return label.size() > 2 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-';
}

std::vector<Utterance> parse_bio(std::istream& in, const std::string& domain, const std::string& source_name,
                                 const ReadOptions& options) {
  std::vector<Utterance> out;
  Utterance current;
  current.domain = domain;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return source_name + ":" + std::to_string(line_no); };
  auto flush = [&] {
    if (!current.tokens.empty()) out.push_back(std::move(current));
    current = Utterance{};
    current.domain = domain;
  };
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) {
      flush();
      continue;
    }
    if (is_blank(line)) throw ParseError(where() + ": whitespace-only line (empty utterance)");
    auto fields = split_two(line);
    if (!fields) throw ParseError(where() + ": expected '<token><TAB or space><label>', got '" + line + "'");
    auto [token, label] = *fields;
    if (options.label_first) std::swap(token, label);
    if (!is_bio_label(label)) throw ParseError(where() + ": illegal BIO label '" + label + "'");
    current.tokens.push_back(std::move(token));
    current.labels.push_back(std::move(label));
  }
  flush();
  return out;
}

std::vector<Utterance> read_bio(const std::filesystem::path& path, const std::string& domain,
                                const ReadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  return parse_bio(in, domain, path.string(), options);
}

void write_bio(std::ostream& out, std::span<const Utterance> utterances) {
  for (const auto& u : utterances) {
    for (std::size_t i = 0; i < u.tokens.size(); ++i) out << u.tokens[i] << '\t' << u.labels[i] << '\n';
    out << '\n';
  }
}

void write_bio(const std::filesystem::path& path, std::span<const Utterance> utterances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path.string() + ": cannot write file");
  write_bio(out, utterances);
}

std::vector<std::vector<std::string>> read_token_blocks(std::istream& in, std::size_t* skipped) {
  std::vector<std::vector<std::string>> blocks;
  std::vector<std::string> current;
  std::size_t blank_run = 0;
  std::size_t empty_blocks = 0;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (is_blank(line)) {
      if (!current.empty()) blocks.push_back(std::move(current));
      current.clear();
      ++blank_run;
      continue;
    }
    if (blank_run > 1 && !blocks.empty()) empty_blocks += blank_run - 1;
    blank_run = 0;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    current.push_back(token);
  }
  if (!current.empty()) blocks.push_back(std::move(current));
  if (skipped) *skipped = empty_blocks;
  return blocks;
}

std::size_t IdMap::add(const std::string& name) {
  auto [it, inserted] = ids_.emplace(name, names_.size());
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<std::size_t> IdMap::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Vocabulary::Vocabulary() {
  words.add(kPadToken);
  words.add(kUnkToken);
}

std::size_t Vocabulary::word_id(const std::string& word) const { return words.find(word).value_or(kUnk); }

std::size_t Vocabulary::label_id(const std::string& label) const {
  if (auto id = labels.find(label)) return *id;
  throw DataError("unknown slot label '" + label + "'");
}

std::size_t Vocabulary::domain_id(const std::string& domain) const {
  if (auto id = domains.find(domain)) return *id;
  throw DataError("unknown domain '" + domain + "'");
}

std::string Vocabulary::dump() const {
  std::ostringstream out;
  out << "slu-vocab " << kFormatVersion << '\n';
  auto section = [&](const char* name, const IdMap& map) {
    out << '[' << name << "] " << map.size() << '\n';
    for (std::size_t i = 0; i < map.size(); ++i) out << i << '\t' << map.name(i) << '\n';
  };
  section("words", words);
  section("labels", labels);
  section("domains", domains);
  return out.str();
}

Vocabulary Vocabulary::parse(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "slu-vocab" || version != kFormatVersion) throw ParseError("vocabulary: bad header");
  Vocabulary vocab;
  vocab.words = IdMap{};
  auto section = [&](const std::string& expected, IdMap& map) {
    std::string tag;
    std::size_t count = 0;
    in >> tag >> count;
    if (tag != "[" + expected + "]") throw ParseError("vocabulary: expected section " + expected);
    std::string line;
    std::getline(in, line);
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) throw ParseError("vocabulary: truncated section " + expected);
      const auto tab = line.find('\t');
      if (tab == std::string::npos || std::stoul(line.substr(0, tab)) != i) {
        throw ParseError("vocabulary: bad entry in " + expected + ": '" + line + "'");
      }
      map.add(line.substr(tab + 1));
    }
    if (map.size() != count) throw ParseError("vocabulary: duplicate entries in " + expected);
  };
  section("words", vocab.words);
  section("labels", vocab.labels);
  section("domains", vocab.domains);
  if (vocab.words.size() < 2 || vocab.words.name(kPad) != kPadToken || vocab.words.name(kUnk) != kUnkToken) {
    throw ParseError("vocabulary: reserved word ids missing");
  }
  return vocab;
}

Vocabulary build_vocab(std::span<const Utterance> utterances) {
  if (utterances.empty()) throw ConfigError("build_vocab: no training utterances");
  Vocabulary vocab;
  for (const auto& u : utterances) {
    for (const auto& w : u.tokens) vocab.words.add(w);
    for (const auto& l : u.labels) vocab.labels.add(l);
    vocab.domains.add(u.domain);
  }
  return vocab;
}

Vocabulary restrict_labels(const Vocabulary& vocab, std::span<const Utterance> utterances) {
  Vocabulary out = vocab;
  out.labels = IdMap{};
  for (const auto& u : utterances) {
    for (const auto& l : u.labels) out.labels.add(l);
  }
  return out;
}

std::vector<Batch> encode_and_batch(std::span<const Utterance> utterances, const Vocabulary& vocab,
                                    const BatchOptions& options, Rng& rng) {
  if (options.batch_size == 0) throw ConfigError("encode_and_batch: batch size must be positive");
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (options.shuffle) rng.shuffle(std::span<std::size_t>(order));

  std::unordered_map<std::string, std::size_t> freq;
  if (options.singleton_unk_prob > 0.0) {
    for (const auto& u : utterances) {
      for (const auto& w : u.tokens) ++freq[w];
    }
  }

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    const std::size_t end = std::min(order.size(), start + options.batch_size);
    Batch b;
    b.size = end - start;
    for (std::size_t k = start; k < end; ++k) b.max_len = std::max(b.max_len, utterances[order[k]].length());
    b.words.assign(b.size * b.max_len, Vocabulary::kPad);
    b.labels.assign(b.size * b.max_len, 0);
    b.mask.assign(b.size * b.max_len, 0);
    for (std::size_t row = 0; row < b.size; ++row) {
      const std::size_t idx = order[start + row];
      const Utterance& u = utterances[idx];
      if (u.tokens.empty() || (options.with_labels && u.tokens.size() != u.labels.size())) {
        throw DataError("utterance " + std::to_string(idx) + ": empty or token/label length mismatch");
      }
      b.source.push_back(idx);
      b.lengths.push_back(u.length());
      try {
        b.domains.push_back(options.with_labels ? vocab.domain_id(u.domain) : vocab.domains.find(u.domain).value_or(0));
        for (std::size_t t = 0; t < u.length(); ++t) {
          std::size_t word = vocab.word_id(u.tokens[t]);
          if (options.singleton_unk_prob > 0.0 && freq[u.tokens[t]] == 1 && rng.bernoulli(options.singleton_unk_prob)) {
            word = Vocabulary::kUnk;
          }
          b.words[b.at(row, t)] = word;
          if (options.with_labels) b.labels[b.at(row, t)] = vocab.label_id(u.labels[t]);
          b.mask[b.at(row, t)] = 1;
        }
      } catch (const DataError& e) {
        throw DataError("utterance " + std::to_string(idx) + ": " + e.what());
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

Split split_dev(std::span<const Utterance> utterances, double fraction, Rng& rng) {
  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < utterances.size(); ++i) by_domain[utterances[i].domain].push_back(i);
  Split split;
  for (auto& [domain, ids] : by_domain) {
    std::size_t n_dev = 0;
    if (ids.size() >= 2) {
      n_dev = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * ids.size())), 1, ids.size() - 1);
    }
    rng.shuffle(std::span<std::size_t>(ids));
    split.dev.insert(split.dev.end(), ids.begin(), ids.begin() + n_dev);
    split.train.insert(split.train.end(), ids.begin() + n_dev, ids.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.dev.begin(), split.dev.end());
  return split;
}

std::vector<Utterance> gather(std::span<const Utterance> utterances, std::span<const std::size_t> indices) {
  std::vector<Utterance> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(utterances[i]);
  return out;
}

}  // namespace slu::data
