#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muvi/errors.hpp"
#include "muvi/io.hpp"
#include "muvi/model.hpp"

namespace muvi {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  double val_dsc = -1.0;
  std::string notes;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'M', 'U', 'V', 'C', 'K', 'P', 'T', '1'};

inline nlohmann::json policy_to_json(const NormPolicy& p) {
  return {{"kind", p.kind == NormKind::batch_norm ? "batch_norm" : "instance_norm"},
          {"stats_source", p.stats_source == StatsSource::frozen_source ? "frozen_source" : "current_input"},
          {"affine_trainable", p.affine_trainable}};
}

inline NormPolicy policy_from_json(const nlohmann::json& j) {
  NormPolicy p;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "batch_norm")
    p.kind = NormKind::batch_norm;
  else if (kind == "instance_norm")
    p.kind = NormKind::instance_norm;
  else
    throw IoError("unknown norm kind '" + kind + "'");
  const std::string src = j.at("stats_source").get<std::string>();
  if (src == "frozen_source")
    p.stats_source = StatsSource::frozen_source;
  else if (src == "current_input")
    p.stats_source = StatsSource::current_input;
  else
    throw IoError("unknown stats source '" + src + "'");
  p.affine_trainable = j.at("affine_trainable").get<bool>();
  p.validate();
  return p;
}

}  // namespace detail

/// Single-file archive: 8-byte magic, little-endian u32 JSON-header length,
/// JSON header (architecture, norm policy, tensor directory, metadata), then
/// the raw float32 tensor blobs in directory order.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, ToyUNet<T>& model, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format"] = "muvi-checkpoint";
  header["version"] = 1;
  header["arch"] = {{"channels_base", model.config().channels_base},
                    {"depth", model.config().depth},
                    {"patch_size", model.config().patch_size},
                    {"seed", model.config().seed}};
  header["norm_policy"] = detail::policy_to_json(model.policy());
  header["meta"] = {{"seed", meta.seed}, {"epochs", meta.epochs}, {"val_dsc", meta.val_dsc}, {"notes", meta.notes}};

  std::vector<float> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const Param<T>* p : model.parameters()) {
    tensors.push_back({{"name", p->name}, {"kind", "param"}, {"size", p->value.size()}});
    for (const T v : p->value) blob.push_back(static_cast<float>(v));
  }
  std::size_t li = 0;
  for (NormLayer<T>* nl : model.norm_layers()) {
    const std::string base = "norm" + std::to_string(li++);
    tensors.push_back({{"name", base + ".running_mean"}, {"kind", "buffer"}, {"size", nl->running_mean.size()}});
    for (const T v : nl->running_mean) blob.push_back(static_cast<float>(v));
    tensors.push_back({{"name", base + ".running_var"}, {"kind", "buffer"}, {"size", nl->running_var.size()}});
    for (const T v : nl->running_var) blob.push_back(static_cast<float>(v));
  }
  header["tensors"] = tensors;

  const std::string hs = header.dump();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(8 + 4 + hs.size() + blob.size() * 4);
  bytes.insert(bytes.end(), detail::kCheckpointMagic, detail::kCheckpointMagic + 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>((hlen >> (8 * i)) & 0xff));
  bytes.insert(bytes.end(), hs.begin(), hs.end());
  const std::size_t data_off = bytes.size();
  bytes.resize(data_off + blob.size() * 4);
  std::memcpy(bytes.data() + data_off, blob.data(), blob.size() * 4);
  detail::write_file_bytes(path, bytes);
}

template <typename T>
struct LoadedCheckpoint {
  ToyUNet<T> model;
  CheckpointMeta meta;
};

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(bytes[8 + static_cast<std::size_t>(i)]) << (8 * i);
  if (bytes.size() < 12 + hlen) throw IoError("truncated checkpoint header: " + path.string());
  const nlohmann::json header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);

  typename ToyUNet<T>::Config cfg;
  cfg.channels_base = header.at("arch").at("channels_base").get<int>();
  cfg.depth = header.at("arch").at("depth").get<int>();
  const auto ps = header.at("arch").at("patch_size").get<std::vector<int>>();
  if (ps.size() != 3) throw IoError("bad patch_size in checkpoint");
  cfg.patch_size = {ps[0], ps[1], ps[2]};
  cfg.seed = header.at("arch").value("seed", 0ull);
  cfg.norm = detail::policy_from_json(header.at("norm_policy"));

  LoadedCheckpoint<T> out{ToyUNet<T>(cfg), {}};
  out.meta.seed = header.at("meta").value("seed", 0ull);
  out.meta.epochs = header.at("meta").value("epochs", 0);
  out.meta.val_dsc = header.at("meta").value("val_dsc", -1.0);
  out.meta.notes = header.at("meta").value("notes", std::string());

  std::size_t off = 12 + hlen;
  const auto take = [&](const nlohmann::json& entry, auto& dst, const std::string& name) {
    const std::size_t n = entry.at("size").get<std::size_t>();
    if (n != dst.size())
      throw IoError("checkpoint tensor " + name + " has size " + std::to_string(n) + ", model expects " +
                    std::to_string(dst.size()));
    if (bytes.size() < off + n * 4) throw IoError("truncated checkpoint data: " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, bytes.data() + off + i * 4, 4);
      dst[i] = static_cast<T>(v);
    }
    off += n * 4;
  };

  const nlohmann::json& tensors = header.at("tensors");
  const auto params = out.model.parameters();
  std::size_t ti = 0;
  for (Param<T>* p : params) {
    if (ti >= tensors.size()) throw IoError("checkpoint tensor directory too short");
    const auto& entry = tensors[ti++];
    if (entry.at("name").get<std::string>() != p->name)
      throw IoError("checkpoint tensor order mismatch at " + p->name);
    take(entry, p->value, p->name);
  }
  for (NormLayer<T>* nl : out.model.norm_layers()) {
    if (ti + 1 >= tensors.size()) throw IoError("checkpoint tensor directory too short");
    take(tensors[ti], nl->running_mean, tensors[ti].at("name").get<std::string>());
    ++ti;
    take(tensors[ti], nl->running_var, tensors[ti].at("name").get<std::string>());
    ++ti;
  }
  if (ti != tensors.size()) throw IoError("checkpoint carries extra tensors");
  return out;
}

}  // namespace muvi
