#pragma once

#include <fstream>

#include "tgda/models.hpp"

namespace tgda::ckpt {

// Checkpoint layout: 8-byte magic "TGDACKPT", u32 version, u64 header length,
// UTF-8 JSON header (architecture echo, epoch, rng state, metrics snapshot,
// tensor directory name -> {dtype, shape, offset, length}), then raw
// little-endian tensor payloads in directory order. Saving is canonical:
// save(load(save(m))) is byte-identical.
constexpr char kMagic[9] = "TGDACKPT";
constexpr uint32_t kVersion = 1;

struct Meta {
  int64_t epoch = 0;
  uint64_t rng_key = 0;
  uint64_t rng_counter = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

namespace detail {

template <typename T>
const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> all_tensors(models::Model<T>& model) {
  auto named = model.named_params();
  auto bufs = model.named_buffers();
  named.insert(named.end(), bufs.begin(), bufs.end());
  std::sort(named.begin(), named.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return named;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, models::Model<T>& model, const Meta& meta) {
  auto tensors = detail::all_tensors(model);
  nlohmann::json dir = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const uint64_t len = static_cast<uint64_t>(t.numel()) * sizeof(T);
    dir[name] = {{"dtype", detail::dtype_name<T>()},
                 {"shape", t.shape()},
                 {"offset", offset},
                 {"length", len}};
    offset += len;
  }
  nlohmann::json header = {{"architecture", {{"preset", model.arch_id()}, {"config", model.arch_config()}}},
                           {"epoch", meta.epoch},
                           {"rng", {{"key", meta.rng_key}, {"counter", meta.rng_counter}}},
                           {"metrics", meta.metrics},
                           {"tensors", dir}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kData, "cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  const uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  check(out.good(), ErrorKind::kData, "checkpoint write failed: " + path);
}

inline nlohmann::json read_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kCheckpoint, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  check(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::kCheckpoint,
        "bad checkpoint magic: " + path);
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  check(version == kVersion, ErrorKind::kCheckpoint,
        "unsupported checkpoint version " + std::to_string(version));
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(in.good() && hlen > 0 && hlen < (1ull << 31), ErrorKind::kCheckpoint,
        "corrupt checkpoint header length");
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  check(in.good(), ErrorKind::kCheckpoint, "truncated checkpoint header");
  try {
    return nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kCheckpoint, "malformed checkpoint header: " + std::string(e.what()));
  }
}

// Strict load: the checkpoint architecture must equal the target model's and
// the tensor directories must match exactly; nothing is loaded on mismatch.
template <typename T>
Meta load_checkpoint(const std::string& path, models::Model<T>& model) {
  nlohmann::json header = read_header(path);
  const auto& arch = header.at("architecture");
  check(arch.at("preset") == model.arch_id() && arch.at("config") == model.arch_config(),
        ErrorKind::kCheckpoint,
        "checkpoint architecture mismatch: checkpoint is '" +
            arch.at("preset").get<std::string>() + "', target model is '" + model.arch_id() + "'");

  auto tensors = detail::all_tensors(model);
  const auto& dir = header.at("tensors");
  check(dir.size() == tensors.size(), ErrorKind::kCheckpoint,
        "checkpoint tensor count mismatch (no partial loads)");
  // validate the full directory before touching the model
  for (const auto& [name, t] : tensors) {
    check(dir.contains(name), ErrorKind::kCheckpoint, "checkpoint is missing tensor " + name);
    const auto& e = dir.at(name);
    check(e.at("dtype") == detail::dtype_name<T>(), ErrorKind::kCheckpoint,
          "dtype mismatch for " + name);
    check(e.at("shape").template get<Shape>() == t.shape(), ErrorKind::kCheckpoint,
          "shape mismatch for " + name);
  }
  std::ifstream in(path, std::ios::binary);
  const uint64_t payload_base = 8 + sizeof(uint32_t) + sizeof(uint64_t) +
                                header.dump().size();
  // header.dump() may differ in byte length from the stored header (key order
  // is canonical but whitespace could differ); recompute the true base
  in.seekg(8 + sizeof(uint32_t), std::ios::beg);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  const uint64_t base = 8 + sizeof(uint32_t) + sizeof(uint64_t) + hlen;
  (void)payload_base;
  for (auto& [name, t] : tensors) {
    const auto& e = dir.at(name);
    in.seekg(static_cast<std::streamoff>(base + e.at("offset").template get<uint64_t>()), std::ios::beg);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(e.at("length").template get<uint64_t>()));
    check(in.good(), ErrorKind::kCheckpoint, "truncated checkpoint payload at " + name);
  }
  Meta meta;
  meta.epoch = header.value("epoch", 0);
  if (header.contains("rng")) {
    meta.rng_key = header["rng"].value("key", 0ull);
    meta.rng_counter = header["rng"].value("counter", 0ull);
  }
  meta.metrics = header.value("metrics", nlohmann::json::object());
  return meta;
}

// Rebuild the model a checkpoint was written from (used by eval/CLI).
template <typename T>
std::unique_ptr<models::Model<T>> model_from_checkpoint(const std::string& path,
                                                        uint64_t seed = 0) {
  nlohmann::json header = read_header(path);
  const auto& arch = header.at("architecture");
  const std::string preset = arch.at("preset").get<std::string>();
  const auto& cfg = arch.at("config");
  auto model = models::build_model<T>(preset, cfg.at("num_classes").get<int64_t>(),
                                      cfg.at("input_size").get<int64_t>(), seed);
  check(model->arch_config() == cfg, ErrorKind::kCheckpoint,
        "checkpoint config does not match the preset builder");
  load_checkpoint(path, *model);
  return model;
}

}  // namespace tgda::ckpt
