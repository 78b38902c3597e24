// SPDX-License-Identifier: Apache-2.0
//
// Independent chunk extraction for checking the scorer.

#pragma once

#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace slu::testing {

/// (utterance, start, end, type)
using ChunkKey = std::tuple<std::size_t, std::size_t, std::size_t, std::string>;

// Port of conlleval's startOfChunk / endOfChunk over (tag, type) pairs,
// collecting chunks into a set.
inline std::set<ChunkKey> oracle_chunks(const std::vector<std::string>& labels, std::size_t utt) {
  std::set<ChunkKey> out;
  auto split = [](const std::string& l) -> std::pair<char, std::string> {
    if (l == "O") return {'O', ""};
    return {l[0], l.substr(2)};
  };
  char prev_tag = 'O';
  std::string prev_type;
  std::size_t start = 0;
  bool in_chunk = false;
  for (std::size_t t = 0; t <= labels.size(); ++t) {
    auto [tag, type] = t < labels.size() ? split(labels[t]) : std::pair<char, std::string>{'O', ""};
    bool end = false;
    if (prev_tag == 'B' || prev_tag == 'I') {
      end = tag == 'B' || tag == 'O' || (tag == 'I' && type != prev_type);
    }
    bool begin = tag == 'B' || (tag == 'I' && (prev_tag == 'O' || type != prev_type));
    if (in_chunk && end) {
      out.insert({utt, start, t - 1, prev_type});
      in_chunk = false;
    }
    if (begin) {
      start = t;
      in_chunk = true;
    }
    prev_tag = tag;
    prev_type = type;
  }
  return out;
}

}  // namespace slu::testing
