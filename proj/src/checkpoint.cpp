#include "misdetect/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "misdetect/error.hpp"

namespace misdetect {

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest_path) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  nlohmann::json manifest;
  manifest["format"] = "misdetect-checkpoint";
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["meta"] = ckpt.meta;
  manifest["blob"] = blob_path.filename().string();
  manifest["tensors"] = nlohmann::json::array();

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw Error("cannot write " + blob_path.string(), "checkpoint");
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != t.rows * t.cols) throw Error("tensor " + t.name + " has inconsistent shape", "checkpoint");
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}, {"count", t.values.size()}});
    for (const float v : t.values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                             static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      blob.write(bytes, 4);
    }
    offset += 4 * t.values.size();
  }
  manifest["blob_bytes"] = offset;

  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write " + manifest_path.string(), "checkpoint");
  out << manifest.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open checkpoint " + manifest_path.string(), "checkpoint");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed checkpoint manifest: " + std::string(e.what()), "checkpoint");
  }
  if (manifest.value("format", "") != "misdetect-checkpoint" ||
      manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error("unsupported checkpoint format in " + manifest_path.string(), "checkpoint");
  }
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw Error("cannot open checkpoint blob " + blob_path.string(), "checkpoint");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != manifest.value("blob_bytes", std::size_t{0})) {
    throw Error("checkpoint blob size disagrees with manifest", "checkpoint");
  }

  Checkpoint ckpt;
  ckpt.meta = manifest.at("meta");
  for (const auto& entry : manifest.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.rows = entry.at("shape").at(0).get<std::size_t>();
    t.cols = entry.at("shape").at(1).get<std::size_t>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != t.rows * t.cols || offset + 4 * count > bytes.size()) {
      throw Error("tensor " + t.name + " lies outside the checkpoint blob", "checkpoint");
    }
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + offset + 4 * i);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      t.values[i] = std::bit_cast<float>(bits);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T>
std::vector<NamedTensor> to_named_tensors(const EncoderParameters<T>& p) {
  std::vector<NamedTensor> out;
  p.for_each([&](const std::string& name, const Mat<T>& m, bool) {
    NamedTensor t{name, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), {}};
    t.values.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    out.push_back(std::move(t));
  });
  return out;
}

template std::vector<NamedTensor> to_named_tensors<float>(const EncoderParameters<float>&);
template std::vector<NamedTensor> to_named_tensors<double>(const EncoderParameters<double>&);

EncoderParameters<float> params_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("encoder")) throw Error("checkpoint has no encoder config", "checkpoint");
  auto p = EncoderParameters<float>::zeros(EncoderConfig::from_json(ckpt.meta.at("encoder")));
  p.for_each([&](const std::string& name, Mat<float>& m, bool) {
    const auto* t = ckpt.find(name);
    if (!t) throw Error("checkpoint is missing tensor " + name, "checkpoint");
    if (t->rows != static_cast<std::size_t>(m.rows()) || t->cols != static_cast<std::size_t>(m.cols())) {
      throw Error("checkpoint tensor " + name + " has the wrong shape", "checkpoint");
    }
    std::memcpy(m.data(), t->values.data(), t->values.size() * sizeof(float));
  });
  return p;
}

}  // namespace misdetect
