// SPDX-License-Identifier: Apache-2.0

#include "slu/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "slu/error.hpp"

namespace slu::eval {

namespace {

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<Chunk> extract_chunks(std::span<const std::string> labels, std::size_t utterance) {
  std::vector<Chunk> out;
  bool open = false;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const std::string& l = labels[t];
    if (l.size() < 2 || l[1] != '-' || (l[0] != 'B' && l[0] != 'I')) {
      open = false;
      continue;
    }
    const std::string type = l.substr(2);
    if (l[0] == 'I' && open && out.back().type == type) {
      out.back().end = t;
      continue;
    }
    out.push_back({type, t, t, utterance});
    open = true;
  }
  return out;
}

Counts& Counts::operator+=(const Counts& o) {
  utterances += o.utterances;
  tokens += o.tokens;
  correct_tokens += o.correct_tokens;
  gold_chunks += o.gold_chunks;
  predicted_chunks += o.predicted_chunks;
  correct_chunks += o.correct_chunks;
  return *this;
}

Scores score(const Counts& c) {
  Scores s;
  const double p = percent(c.correct_chunks, c.predicted_chunks);
  const double r = percent(c.correct_chunks, c.gold_chunks);
  s.precision = round2(p);
  s.recall = round2(r);
  s.f1 = p + r > 0.0 ? round2(2.0 * p * r / (p + r)) : 0.0;
  s.token_accuracy = round2(percent(c.correct_tokens, c.tokens));
  return s;
}

Counts count_chunks(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("chunk_f1: " + std::to_string(gold.size()) + " gold utterances but " +
                        std::to_string(predicted.size()) + " predictions");
  }
  Counts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold[i].labels;
    const auto& p = predicted[i];
    if (g.size() != p.size()) {
      throw ContractError("chunk_f1: utterance " + std::to_string(i) + " has " + std::to_string(g.size()) +
                          " gold labels but " + std::to_string(p.size()) + " predicted");
    }
    ++c.utterances;
    c.tokens += g.size();
    for (std::size_t t = 0; t < g.size(); ++t) c.correct_tokens += g[t] == p[t];
    const auto gc = extract_chunks(g, i);
    const auto pc = extract_chunks(p, i);
    c.gold_chunks += gc.size();
    c.predicted_chunks += pc.size();
    // Both lists are ordered by start and non-overlapping; merge.
    std::size_t a = 0, b = 0;
    while (a < gc.size() && b < pc.size()) {
      if (gc[a].start < pc[b].start) {
        ++a;
      } else if (pc[b].start < gc[a].start) {
        ++b;
      } else {
        c.correct_chunks += gc[a].end == pc[b].end && gc[a].type == pc[b].type;
        ++a;
        ++b;
      }
    }
  }
  return c;
}

Scores chunk_f1(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted) {
  return score(count_chunks(gold, predicted));
}

EvalReport evaluate(std::span<const data::Utterance> gold, std::span<const std::vector<std::string>> predicted) {
  if (gold.size() != predicted.size()) count_chunks(gold, predicted);  // throws
  EvalReport report;
  Counts& combined = report.counts[EvalReport::kCombined];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    Counts one;
    try {
      one = count_chunks(gold.subspan(i, 1), predicted.subspan(i, 1));
    } catch (const ContractError&) {
      throw ContractError("chunk_f1: utterance " + std::to_string(i) + " has " + std::to_string(gold[i].length()) +
                          " gold labels but " + std::to_string(predicted[i].size()) + " predicted");
    }
    report.counts[gold[i].domain] += one;
    combined += one;
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  auto block = [&](const std::string& name, const Counts& c) {
    const Scores s = score(c);
    out << '[' << name << "]\n";
    out << "utterances = " << c.utterances << '\n';
    out << "tokens = " << c.tokens << '\n';
    out << "gold_chunks = " << c.gold_chunks << '\n';
    out << "predicted_chunks = " << c.predicted_chunks << '\n';
    out << "correct_chunks = " << c.correct_chunks << '\n';
    out << "precision = " << fixed2(s.precision) << '\n';
    out << "recall = " << fixed2(s.recall) << '\n';
    out << "f1 = " << fixed2(s.f1) << '\n';
    out << "token_accuracy = " << fixed2(s.token_accuracy) << '\n';
    if (name == EvalReport::kCombined) {
      out << "aggregation = micro\n";
      if (report.probe_accuracy) out << "probe_accuracy = " << fixed2(*report.probe_accuracy) << '\n';
    }
    out << '\n';
  };
  for (const auto& [name, c] : report.counts) {
    if (name != EvalReport::kCombined) block(name, c);
  }
  auto it = report.counts.find(EvalReport::kCombined);
  if (it != report.counts.end()) block(it->first, it->second);
  return out.str();
}

}  // namespace slu::eval
