#include "deepact/model/checkpoint.hpp"

#include <openssl/sha.h>

#include <fstream>
#include <sstream>

namespace deepact {

using nlohmann::json;

json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},
          {"ff_width", c.ff_width},
          {"dropout", c.dropout},
          {"attr_dim", c.attr_dim},
          {"max_len", c.max_len},
          {"attribute_cardinalities", c.attribute_cardinalities},
          {"attribute_dummies", c.attribute_dummies},
          {"personal_count", c.personal_count},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_width = j.at("ff_width").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.attr_dim = j.value("attr_dim", 0);
  c.max_len = j.at("max_len").get<int>();
  c.attribute_cardinalities = j.at("attribute_cardinalities").get<std::vector<int>>();
  c.attribute_dummies = j.value("attribute_dummies", std::vector<int>{});
  c.personal_count = j.at("personal_count").get<int>();
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  c.validate();
  return c;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : digest) {
    out += kHex[b >> 4];
    out += kHex[b & 15];
  }
  return out;
}

namespace {

std::string body_digest(const json& doc) {
  json body = doc;
  body.erase("checksum");
  return sha256_hex(body.dump());
}

}  // namespace

void save_params(const ModelParams<double>& p, const std::filesystem::path& path) {
  json tensors = json::array();
  for_each_tensor(p, [&](const std::string& name, const std::string&, const Mat<double>& m) {
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"data", std::vector<double>(m.data(), m.data() + m.size())}});
  });
  json doc = {{"format", "deepact-checkpoint"}, {"version", 1}, {"config", to_json(p.config)}, {"tensors", tensors}};
  doc["checksum"] = body_digest(doc);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << doc.dump() << '\n';
}

ModelParams<double> load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ChecksumError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("checksum") || doc.value("format", "") != "deepact-checkpoint") {
    throw ChecksumError("not a checkpoint: " + path.string());
  }
  if (doc.at("checksum").get<std::string>() != body_digest(doc)) {
    throw ChecksumError("checksum mismatch in " + path.string());
  }
  const ModelConfig config = model_config_from_json(doc.at("config"));
  ModelParams<double> p;
  p.config = config;
  p.attribute_tables.resize(config.attribute_cardinalities.size());
  p.encoder.resize(static_cast<std::size_t>(config.encoder_layers));
  p.decoder.resize(static_cast<std::size_t>(config.decoder_layers));
  const auto& tensors = doc.at("tensors");
  std::size_t i = 0;
  for_each_tensor(p, [&](const std::string& name, const std::string&, Mat<double>& m) {
    if (i >= tensors.size() || tensors[i].at("name").get<std::string>() != name) {
      throw ChecksumError("checkpoint tensor list does not match the model layout at " + name);
    }
    const auto& t = tensors[i++];
    const auto rows = t.at("shape")[0].get<Eigen::Index>();
    const auto cols = t.at("shape")[1].get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ChecksumError("tensor size mismatch: " + name);
    m = Eigen::Map<const Mat<double>>(data.data(), rows, cols);
  });
  if (i != tensors.size()) throw ChecksumError("checkpoint has extra tensors");
  return p;
}

}  // namespace deepact
