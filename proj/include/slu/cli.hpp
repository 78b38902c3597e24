// SPDX-License-Identifier: Apache-2.0
//
// The slutag command line: train, eval, predict and synth subcommands.
//
// Exit codes: 0 success, 2 configuration/usage/input error, 3 training
// aborted on a non-finite gradient, 1 anything else.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "slu/model.hpp"
#include "slu/train.hpp"

namespace slu::cli {

inline constexpr int kSchemaVersion = 1;

struct CorpusSpec {
  std::string domain;
  std::filesystem::path train;
  std::optional<std::filesystem::path> test;
  bool label_first = false;
};

/// Experiment file (JSON):
///
///   {
///     "schema_version": 1,
///     "regime": "specific" | "general" | "general-adv" | "joint",
///     "seed": 7,
///     "out_dir": "runs/flights-spec",
///     "corpora": [{"domain": "flights", "train": "flights.train.bio",
///                  "test": "flights.test.bio", "label_first": false}, ...],
///     "target_domain": "flights",          // specific and joint
///     "model": {"embedding_dim": 64, "hidden_dim": 64, "mlp_hidden_dim": 64},
///     "train": {"learning_rate": 0.001, "batch_size": 16, "clip_norm": 5,
///               "dropout": 0.5, "lambda_adv": 0.01, "max_epochs": 50,
///               "patience": 3, "dev_fraction": 0.1,
///               "singleton_unk_prob": 0.5},
///     "joint": {"specific_ckpt": "...", "general_ckpt": "..."},
///     "probe": false                       // domain probe on the test sets
///   }
///
/// Relative paths are resolved against the file's directory. The word
/// vocabulary is always built from the training files of every listed
/// corpus, so runs over the same corpus list can be combined into a joint
/// model. Unknown keys are rejected.
struct ExperimentConfig {
  model::ModelKind regime = model::ModelKind::specific;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  std::vector<CorpusSpec> corpora;
  std::optional<std::string> target_domain;
  train::Architecture arch;
  train::TrainConfig train;
  std::optional<std::filesystem::path> specific_ckpt;
  std::optional<std::filesystem::path> general_ckpt;
  bool probe = false;
};

/// Throws ConfigError with a message naming the offending key.
ExperimentConfig parse_experiment(const std::string& json_text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Runs the command line. Never throws; errors are reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slu::cli
