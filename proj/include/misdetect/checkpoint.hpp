#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "misdetect/encoder.hpp"

namespace misdetect {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;  // row-major
};

/// A manifest (JSON) plus a blob of little-endian float32 values stored in
/// manifest order. `meta` carries the encoder config and any run metadata.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

/// Writes `<stem>.json` and `<stem>.bin`; `manifest_path` names the JSON file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest_path);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

/// Encoder tensors in canonical order, converted to float32.
template <typename T>
std::vector<NamedTensor> to_named_tensors(const EncoderParameters<T>& p);

/// Rebuilds parameters for `cfg`; every encoder tensor must be present with
/// the expected shape.
EncoderParameters<float> params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace misdetect
