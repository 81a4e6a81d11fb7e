#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deepact/model/params.hpp"
#include "json.hpp"

namespace deepact {

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// JSON container: {format, version, config, tensors:[{name, shape, data}],
/// checksum}. Values are stored as float64 so float models round-trip
/// exactly.
void save_params(const ModelParams<double>& p, const std::filesystem::path& path);
ModelParams<double> load_params(const std::filesystem::path& path);

template <typename Scalar>
void save_params(const ModelParams<Scalar>& p, const std::filesystem::path& path) {
  save_params(cast_params<double>(p), path);
}

template <typename Scalar>
ModelParams<Scalar> load_params_as(const std::filesystem::path& path) {
  return cast_params<Scalar>(load_params(path));
}

}  // namespace deepact
