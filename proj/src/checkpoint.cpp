// SPDX-License-Identifier: Apache-2.0

#include "slu/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "slu/error.hpp"

namespace slu::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host byte order");

namespace {

using nlohmann::json;
constexpr char kMagic[8] = {'S', 'L', 'U', 'C', 'K', 'P', 'T', '1'};

json config_json(const model::ModelConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"hidden_dim", c.hidden_dim},  {"mlp_hidden_dim", c.mlp_hidden_dim},
          {"dropout_rate", c.dropout_rate},   {"vocab_size", c.vocab_size},  {"num_slot_labels", c.num_slot_labels},
          {"num_domains", c.num_domains},     {"lambda_adv", c.lambda_adv}};
}

model::ModelConfig config_from(const json& j) {
  model::ModelConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.mlp_hidden_dim = j.at("mlp_hidden_dim").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.num_slot_labels = j.at("num_slot_labels").get<std::size_t>();
  c.num_domains = j.at("num_domains").get<std::size_t>();
  c.lambda_adv = j.at("lambda_adv").get<double>();
  return c;
}

std::string pack(json header, const model::ParameterSet& params) {
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : params.all()) {
    index.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size();
  }
  header["tensors"] = std::move(index);
  header["format_version"] = kFormatVersion;
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += text;
  for (const auto& [name, p] : params.all()) {
    out.append(reinterpret_cast<const char*>(p.value.raw()), p.value.size() * sizeof(double));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(path.string() + ": cannot write checkpoint");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError(path.string() + ": write failed");
}

}  // namespace

std::vector<std::vector<std::size_t>> Checkpoint::predict(const data::Batch& batch) const {
  return joint ? joint->predict(batch) : slot->predict(batch);
}

std::string serialize(const model::SlotModel& m, const data::Vocabulary& vocab) {
  json header = {{"kind", model::to_string(m.kind())}, {"config", config_json(m.config())}, {"vocab", vocab.dump()}};
  return pack(std::move(header), m.params());
}

std::string serialize(const model::JointModel& m, const data::Vocabulary& vocab) {
  json header = {{"kind", model::to_string(model::ModelKind::joint)},
                 {"specific_config", config_json(m.specific_encoder().config())},
                 {"general_config", config_json(m.general_encoder().config())},
                 {"mlp_hidden_dim", m.mlp_hidden_dim()},
                 {"dropout_rate", m.dropout_rate()},
                 {"num_slot_labels", m.num_slot_labels()},
                 {"vocab", vocab.dump()}};
  return pack(std::move(header), m.params());
}

Checkpoint deserialize(std::string_view bytes, const std::string& source_name) {
  auto fail = [&](const std::string& what) { return ConfigError(source_name + ": " + what); };
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw fail("not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof kMagic, sizeof len);
  const std::size_t body = sizeof kMagic + sizeof len;
  if (len > bytes.size() - body) throw fail("truncated header");
  Checkpoint ck;
  try {
    const json header = json::parse(bytes.substr(body, len));
    if (header.at("format_version").get<int>() != kFormatVersion) throw fail("unsupported format version");
    ck.kind = model::parse_model_kind(header.at("kind").get<std::string>());
    ck.vocab = data::Vocabulary::parse(header.at("vocab").get<std::string>());

    const std::string_view payload = bytes.substr(body + len);
    model::ParameterSet params;
    std::size_t expected = 0;
    for (const auto& entry : header.at("tensors")) {
      const auto shape = entry.at("shape").get<ad::Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = ad::shape_numel(shape);
      if (offset != expected || (offset + n) * sizeof(double) > payload.size()) throw fail("bad tensor index");
      std::vector<double> values(n);
      std::memcpy(values.data(), payload.data() + offset * sizeof(double), n * sizeof(double));
      params.add(entry.at("name").get<std::string>(), ad::Tensor(shape, std::move(values)));
      expected += n;
    }
    if (expected * sizeof(double) != payload.size()) throw fail("payload size does not match tensor index");

    if (ck.kind == model::ModelKind::joint) {
      ck.joint.emplace(config_from(header.at("specific_config")), config_from(header.at("general_config")),
                       header.at("mlp_hidden_dim").get<std::size_t>(), header.at("dropout_rate").get<double>(),
                       header.at("num_slot_labels").get<std::size_t>(), std::move(params));
      if (ck.joint->num_slot_labels() != ck.vocab.labels.size()) throw fail("label table does not match model");
    } else {
      ck.slot.emplace(config_from(header.at("config")), ck.kind, std::move(params));
      const auto& c = ck.slot->config();
      if (c.num_slot_labels != ck.vocab.labels.size() || c.vocab_size != ck.vocab.words.size()) {
        throw fail("vocabulary does not match model config");
      }
    }
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  } catch (const ParseError& e) {
    throw fail(e.what());
  }
  return ck;
}

void save(const std::filesystem::path& path, const model::SlotModel& m, const data::Vocabulary& vocab) {
  write_file(path, serialize(m, vocab));
}

void save(const std::filesystem::path& path, const model::JointModel& m, const data::Vocabulary& vocab) {
  write_file(path, serialize(m, vocab));
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open checkpoint");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str(), path.string());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string parameter_hash(const model::ParameterSet& params, std::span<const std::string> names) {
  std::string bytes;
  for (const auto& name : names) {
    const auto& v = params.at(name).value;
    bytes += name;
    bytes += '\0';
    bytes += ad::shape_string(v.shape());
    bytes.append(reinterpret_cast<const char*>(v.raw()), v.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

}  // namespace slu::ckpt
