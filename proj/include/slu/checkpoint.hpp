// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints.
//
// Layout: the 8-byte magic "SLUCKPT1", a little-endian uint64 header length,
// a JSON header (format version, model kind, configs, vocabulary dump and a
// tensor index of name/shape/offset), then every tensor as row-major
// little-endian float64 in index order.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "slu/data.hpp"
#include "slu/model.hpp"

namespace slu::ckpt {

inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  model::ModelKind kind = model::ModelKind::specific;
  data::Vocabulary vocab;
  std::optional<model::SlotModel> slot;    // kind != joint
  std::optional<model::JointModel> joint;  // kind == joint

  /// Eval-mode label ids for every row of `batch`, real tokens only.
  std::vector<std::vector<std::size_t>> predict(const data::Batch& batch) const;
};

std::string serialize(const model::SlotModel& m, const data::Vocabulary& vocab);
std::string serialize(const model::JointModel& m, const data::Vocabulary& vocab);
Checkpoint deserialize(std::string_view bytes, const std::string& source_name = "checkpoint");

void save(const std::filesystem::path& path, const model::SlotModel& m, const data::Vocabulary& vocab);
void save(const std::filesystem::path& path, const model::JointModel& m, const data::Vocabulary& vocab);
/// Throws ConfigError when the file is missing or malformed.
Checkpoint load(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// SHA-256 over the named parameters (name, shape, raw float64 bytes) in
/// the given order.
std::string parameter_hash(const model::ParameterSet& params, std::span<const std::string> names);

}  // namespace slu::ckpt
