// SPDX-License-Identifier: Apache-2.0

#include "slu/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "slu/checkpoint.hpp"
#include "slu/error.hpp"
#include "slu/metrics.hpp"
#include "slu/probe.hpp"
#include "slu/synth.hpp"

namespace slu::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

template <class T>
void get_opt(const json& j, const char* key, const std::string& where, T& target) {
  if (j.contains(key)) target = get<T>(j, key, where);
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(path.string() + ": cannot write file");
  out << text;
}

std::vector<data::Utterance> concat(const std::map<std::string, std::vector<data::Utterance>>& by_domain,
                                    const std::vector<CorpusSpec>& order) {
  std::vector<data::Utterance> out;
  for (const auto& c : order) {
    const auto& us = by_domain.at(c.domain);
    out.insert(out.end(), us.begin(), us.end());
  }
  return out;
}

/// Labels in `utts` that the model cannot emit.
void check_label_set(const std::vector<data::Utterance>& utts, const data::Vocabulary& vocab, const std::string& what) {
  for (const auto& u : utts) {
    for (const auto& l : u.labels) {
      if (!vocab.labels.find(l)) throw ConfigError("label-set mismatch: " + what + " uses label '" + l + "' unknown to the model");
    }
  }
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed, std::optional<fs::path> out_dir,
              std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (seed) cfg.seed = cfg.train.seed = *seed;
  if (out_dir) cfg.out_dir = *out_dir;

  std::map<std::string, std::vector<data::Utterance>> train_by, test_by;
  for (const auto& c : cfg.corpora) {
    data::ReadOptions ro{c.label_first};
    train_by[c.domain] = data::read_bio(c.train, c.domain, ro);
    if (train_by[c.domain].empty()) throw ConfigError(c.train.string() + ": no utterances");
    if (c.test) test_by[c.domain] = data::read_bio(*c.test, c.domain, ro);
  }
  const auto all_train = concat(train_by, cfg.corpora);
  const data::Vocabulary vocab = data::build_vocab(all_train);

  fs::create_directories(cfg.out_dir);
  const fs::path log_path = cfg.out_dir / "metrics.jsonl";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw ConfigError(log_path.string() + ": cannot write");
  train::Hooks hooks;
  hooks.on_epoch = [&](const train::EpochRecord& r) { log << train::to_json_line(r) << '\n' << std::flush; };

  const fs::path ckpt_path = cfg.out_dir / "model.ckpt";
  std::vector<std::string> test_domains;
  std::optional<ckpt::Checkpoint> trained;
  double best_dev = 0.0;
  std::size_t best_epoch = 0;

  auto finish_slot = [&](train::TrainResult<model::SlotModel> r) {
    best_dev = r.best_dev_f1;
    best_epoch = r.best_epoch;
    ckpt::save(ckpt_path, r.model, r.vocab);
    ckpt::Checkpoint ck;
    ck.kind = r.model.kind();
    ck.vocab = std::move(r.vocab);
    ck.slot.emplace(std::move(r.model));
    trained = std::move(ck);
  };

  switch (cfg.regime) {
    case model::ModelKind::specific:
      finish_slot(train::train_specific(train_by.at(*cfg.target_domain), vocab, cfg.arch, cfg.train, hooks));
      test_domains = {*cfg.target_domain};
      break;
    case model::ModelKind::general:
    case model::ModelKind::general_adv:
      finish_slot(train::train_general(all_train, vocab, cfg.arch, cfg.train, hooks));
      for (const auto& c : cfg.corpora) test_domains.push_back(c.domain);
      break;
    case model::ModelKind::joint: {
      ckpt::Checkpoint spec = ckpt::load(*cfg.specific_ckpt);
      ckpt::Checkpoint gen = ckpt::load(*cfg.general_ckpt);
      if (!spec.slot || !gen.slot) throw ConfigError("joint: encoder checkpoints must hold specific or general models");
      if (spec.vocab.words != vocab.words || gen.vocab.words != vocab.words) {
        throw ConfigError("joint: vocabulary mismatch between the encoder checkpoints and the configured corpora");
      }
      auto r = train::train_joint(*spec.slot, *gen.slot, train_by.at(*cfg.target_domain), vocab,
                                  cfg.arch.mlp_hidden_dim, cfg.train, hooks);
      best_dev = r.best_dev_f1;
      best_epoch = r.best_epoch;
      ckpt::save(ckpt_path, r.model, r.vocab);
      ckpt::Checkpoint ck;
      ck.kind = model::ModelKind::joint;
      ck.vocab = std::move(r.vocab);
      ck.joint.emplace(std::move(r.model));
      trained = std::move(ck);
      test_domains = {*cfg.target_domain};
      break;
    }
  }
  out << "checkpoint: " << ckpt_path.string() << "\n";
  char line[96];
  std::snprintf(line, sizeof line, "best dev f1: %.2f (epoch %zu)\n", best_dev, best_epoch);
  out << line;

  std::vector<data::Utterance> test;
  for (const auto& d : test_domains) {
    auto it = test_by.find(d);
    if (it != test_by.end()) test.insert(test.end(), it->second.begin(), it->second.end());
  }
  if (!test.empty()) {
    const auto& ck = *trained;
    auto preds = train::predict_labels([&](const data::Batch& b) { return ck.predict(b); }, test, ck.vocab);
    eval::EvalReport report = eval::evaluate(test, preds);
    if (cfg.probe) {
      if (!ck.slot) throw ConfigError("probe: only specific and general models have a single encoder to probe");
      std::vector<data::Utterance> probe_test;
      for (const auto& c : cfg.corpora) {
        auto it = test_by.find(c.domain);
        if (it != test_by.end()) probe_test.insert(probe_test.end(), it->second.begin(), it->second.end());
      }
      report.probe_accuracy =
          eval::probe_domain_accuracy(ck.slot->encoder(), all_train, probe_test, ck.vocab, cfg.train).accuracy;
    }
    train::EpochRecord rec;
    rec.epoch = best_epoch;
    rec.split = "test";
    rec.f1 = report.f1();
    rec.probe_acc = report.probe_accuracy;
    log << train::to_json_line(rec) << '\n';
    const std::string text = eval::format_report(report);
    write_text(cfg.out_dir / "report.txt", text);
    out << text;
  } else if (cfg.probe) {
    err << "warning: probe requested but no test files configured\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval / predict / synth

std::string domain_from_path(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.substr(0, name.find('.'));
}

int cmd_eval(const fs::path& ckpt_path, const std::vector<fs::path>& tests, const std::vector<std::string>& domains,
             bool label_first, std::optional<fs::path> report_path, std::ostream& out) {
  if (!domains.empty() && domains.size() != tests.size()) {
    throw ConfigError("eval: --domain must be given once per --test file");
  }
  const ckpt::Checkpoint ck = ckpt::load(ckpt_path);
  std::vector<data::Utterance> gold;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const std::string domain = domains.empty() ? domain_from_path(tests[i]) : domains[i];
    auto us = data::read_bio(tests[i], domain, {label_first});
    check_label_set(us, ck.vocab, tests[i].string());
    gold.insert(gold.end(), us.begin(), us.end());
  }
  auto preds = train::predict_labels([&](const data::Batch& b) { return ck.predict(b); }, gold, ck.vocab);
  const std::string text = eval::format_report(eval::evaluate(gold, preds));
  write_text(report_path ? *report_path : fs::path(ckpt_path.string() + ".eval.txt"), text);
  out << text;
  return 0;
}

int cmd_predict(const fs::path& ckpt_path, const fs::path& in_path, const fs::path& out_path, std::ostream& err) {
  const ckpt::Checkpoint ck = ckpt::load(ckpt_path);
  std::ifstream in(in_path);
  if (!in) throw ConfigError(in_path.string() + ": cannot open file");
  std::size_t skipped = 0;
  const auto blocks = data::read_token_blocks(in, &skipped);
  if (skipped) err << "warning: skipped " << skipped << " empty utterance block(s) in " << in_path.string() << "\n";
  std::vector<data::Utterance> utts;
  for (const auto& b : blocks) utts.push_back({b, {}, ""});
  const auto preds = train::predict_labels([&](const data::Batch& b) { return ck.predict(b); }, utts, ck.vocab);
  for (std::size_t i = 0; i < utts.size(); ++i) utts[i].labels = preds[i];
  std::ostringstream text;
  data::write_bio(text, utts);
  write_text(out_path, text.str());
  return 0;
}

int cmd_synth(bool suite, const std::optional<fs::path>& spec, std::uint64_t seed, const fs::path& out_dir,
              std::ostream& out) {
  if (suite == spec.has_value()) throw ConfigError("synth: give exactly one of --suite or --spec");
  const synth::SuitePlan plan =
      suite ? synth::standard_suite_plan(seed) : synth::parse_plan(read_text(*spec), spec->string());
  const auto corpora = synth::realize(plan, seed);
  synth::write_suite(out_dir, corpora, seed);
  for (const auto& c : corpora) {
    out << c.domain << ": " << c.train.size() << " train, " << c.test.size() << " test\n";
  }
  out << "manifest: " << (out_dir / "manifest.json").string() << "\n";
  return 0;
}

}  // namespace

ExperimentConfig parse_experiment(const std::string& json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  const std::string where = "config";
  reject_unknown(root,
                 {"schema_version", "regime", "seed", "out_dir", "corpora", "target_domain", "model", "train", "joint",
                  "probe"},
                 where);
  if (get<int>(root, "schema_version", where) != kSchemaVersion) {
    throw ConfigError("config: unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  ExperimentConfig cfg;
  cfg.regime = model::parse_model_kind(get<std::string>(root, "regime", where));
  get_opt(root, "seed", where, cfg.seed);
  cfg.train.seed = cfg.seed;
  std::string out_dir = "out";
  get_opt(root, "out_dir", where, out_dir);
  cfg.out_dir = resolve(base_dir, out_dir);
  get_opt(root, "probe", where, cfg.probe);

  if (!root.contains("corpora") || !root["corpora"].is_array() || root["corpora"].empty()) {
    throw ConfigError("config: 'corpora' must be a non-empty list");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < root["corpora"].size(); ++i) {
    const json& c = root["corpora"][i];
    const std::string cw = "config: corpora[" + std::to_string(i) + "]";
    reject_unknown(c, {"domain", "train", "test", "label_first"}, cw);
    CorpusSpec spec;
    spec.domain = get<std::string>(c, "domain", cw);
    spec.train = resolve(base_dir, get<std::string>(c, "train", cw));
    if (c.contains("test")) spec.test = resolve(base_dir, get<std::string>(c, "test", cw));
    get_opt(c, "label_first", cw, spec.label_first);
    if (spec.domain.empty() || !seen.insert(spec.domain).second) throw ConfigError(cw + ": empty or duplicate domain");
    cfg.corpora.push_back(std::move(spec));
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(m, {"embedding_dim", "hidden_dim", "mlp_hidden_dim"}, "config: model");
    get_opt(m, "embedding_dim", "config: model", cfg.arch.embedding_dim);
    get_opt(m, "hidden_dim", "config: model", cfg.arch.hidden_dim);
    get_opt(m, "mlp_hidden_dim", "config: model", cfg.arch.mlp_hidden_dim);
    if (!cfg.arch.embedding_dim || !cfg.arch.hidden_dim || !cfg.arch.mlp_hidden_dim) {
      throw ConfigError("config: model dimensions must be >= 1");
    }
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    const std::string tw = "config: train";
    reject_unknown(t,
                   {"learning_rate", "batch_size", "clip_norm", "dropout", "lambda_adv", "max_epochs", "patience",
                    "dev_fraction", "singleton_unk_prob"},
                   tw);
    get_opt(t, "learning_rate", tw, cfg.train.learning_rate);
    get_opt(t, "batch_size", tw, cfg.train.batch_size);
    get_opt(t, "clip_norm", tw, cfg.train.clip_norm);
    get_opt(t, "dropout", tw, cfg.train.dropout);
    get_opt(t, "lambda_adv", tw, cfg.train.lambda_adv);
    get_opt(t, "max_epochs", tw, cfg.train.max_epochs);
    get_opt(t, "patience", tw, cfg.train.patience);
    get_opt(t, "dev_fraction", tw, cfg.train.dev_fraction);
    get_opt(t, "singleton_unk_prob", tw, cfg.train.singleton_unk_prob);
  }
  cfg.train.validate();
  if (root.contains("joint")) {
    const json& j = root["joint"];
    reject_unknown(j, {"specific_ckpt", "general_ckpt"}, "config: joint");
    if (j.contains("specific_ckpt")) cfg.specific_ckpt = resolve(base_dir, get<std::string>(j, "specific_ckpt", "config: joint"));
    if (j.contains("general_ckpt")) cfg.general_ckpt = resolve(base_dir, get<std::string>(j, "general_ckpt", "config: joint"));
  }
  if (root.contains("target_domain")) cfg.target_domain = get<std::string>(root, "target_domain", where);

  const bool per_domain = cfg.regime == model::ModelKind::specific || cfg.regime == model::ModelKind::joint;
  if (per_domain) {
    if (!cfg.target_domain) {
      if (cfg.corpora.size() != 1) throw ConfigError("config: target_domain is required with more than one corpus");
      cfg.target_domain = cfg.corpora.front().domain;
    }
    if (!seen.count(*cfg.target_domain)) throw ConfigError("config: target_domain '" + *cfg.target_domain + "' is not a corpus");
  }
  if (cfg.regime == model::ModelKind::general_adv) {
    if (cfg.corpora.size() < 2) throw ConfigError("config: adversary requires >= 2 domains");
    if (!(cfg.train.lambda_adv > 0.0)) throw ConfigError("config: regime general-adv needs train.lambda_adv > 0");
  }
  if (cfg.regime == model::ModelKind::general && cfg.train.lambda_adv != 0.0) {
    throw ConfigError("config: regime general trains without an adversary; use general-adv for lambda_adv > 0");
  }
  if (cfg.regime != model::ModelKind::general_adv) cfg.train.lambda_adv = 0.0;
  if (cfg.regime == model::ModelKind::joint && (!cfg.specific_ckpt || !cfg.general_ckpt)) {
    throw ConfigError("config: regime joint requires joint.specific_ckpt and joint.general_ckpt");
  }
  if (cfg.probe && cfg.corpora.size() < 2) throw ConfigError("config: probe needs at least 2 domains");
  return cfg;
}

ExperimentConfig load_experiment(const fs::path& path) {
  return parse_experiment(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-domain slot filling with Bi-LSTM taggers", "slutag"};
  app.require_subcommand(1);

  std::string config_path, train_out;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "train a model from an experiment file");
  train->add_option("--config", config_path, "experiment JSON")->required();
  train->add_option("--seed", train_seed, "override the seed");
  train->add_option("--out", train_out, "override the output directory");

  std::string eval_ckpt, eval_report;
  std::vector<std::string> eval_tests, eval_domains;
  bool eval_label_first = false;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on BIO test files");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  ev->add_option("--test", eval_tests, "BIO test files")->required();
  ev->add_option("--domain", eval_domains, "domain name per test file (default: file name up to the first dot)");
  ev->add_flag("--label-first", eval_label_first, "files list the label before the token");
  ev->add_option("--report", eval_report, "report path (default: <ckpt>.eval.txt)");

  std::string pred_ckpt, pred_in, pred_out;
  auto* pred = app.add_subcommand("predict", "tag token files");
  pred->add_option("--ckpt", pred_ckpt, "checkpoint")->required();
  pred->add_option("--in", pred_in, "one token per line, blank line between utterances")->required();
  pred->add_option("--out", pred_out, "BIO output")->required();

  bool synth_suite = false;
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  auto* syn = app.add_subcommand("synth", "generate synthetic corpora");
  syn->add_flag("--suite", synth_suite, "the built-in four-domain suite");
  syn->add_option("--spec", synth_spec, "JSON grammar plan");
  syn->add_option("--seed", synth_seed, "generator seed");
  syn->add_option("--out", synth_out, "output directory")->required();

  std::vector<std::string> argv_storage = {"slutag"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      return cmd_train(config_path, train_seed, train_out.empty() ? std::nullopt : std::optional<fs::path>(train_out),
                       out, err);
    }
    if (*ev) {
      std::vector<fs::path> tests(eval_tests.begin(), eval_tests.end());
      return cmd_eval(eval_ckpt, tests, eval_domains, eval_label_first,
                      eval_report.empty() ? std::nullopt : std::optional<fs::path>(eval_report), out);
    }
    if (*pred) return cmd_predict(pred_ckpt, pred_in, pred_out, err);
    if (*syn) {
      return cmd_synth(synth_suite, synth_spec.empty() ? std::nullopt : std::optional<fs::path>(synth_spec), synth_seed,
                       synth_out, out);
    }
  } catch (const TrainingAborted& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace slu::cli
