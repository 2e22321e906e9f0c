#pragma once

// Two-file checkpoint: <base>.json manifest + <base>.bin blob of
// little-endian float32 tensors, row-major, in manifest order.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "attnscope/error.hpp"
#include "attnscope/serialize.hpp"
#include "attnscope/tokenizer.hpp"
#include "attnscope/transformer.hpp"

namespace attnscope {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointPaths {
  std::filesystem::path manifest;
  std::filesystem::path blob;
};

/// Accepts either the base path or the manifest path itself.
inline CheckpointPaths checkpoint_paths(const std::filesystem::path& path) {
  std::filesystem::path base = path;
  if (base.extension() == ".json") base.replace_extension();
  CheckpointPaths p;
  p.manifest = base;
  p.manifest += ".json";
  p.blob = base;
  p.blob += ".bin";
  return p;
}

struct Checkpoint {
  Weights weights;
  ModelConfig config;
  Vocab vocab;
};

namespace detail {

inline void append_f32_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(ErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(ErrorCode::io_failure, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(ErrorCode::io_failure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Serialized manifest and blob bytes, without touching the filesystem.
/// `blob_name` is the file name recorded in the manifest.
inline std::pair<std::string, std::string> encode_checkpoint(const Weights& weights,
                                                             const ModelConfig& config,
                                                             const Vocab& vocab,
                                                             const std::string& blob_name) {
  config.validate();
  validate_weights(weights, config);
  std::string blob;
  Json tensors = Json::array();
  visit_tensors(weights, config,
                [&](const std::string& name, const Matrix& m, std::size_t, std::size_t) {
                  const std::size_t offset = blob.size();
                  for (double v : m.data()) detail::append_f32_le(blob, v);
                  tensors.push_back(Json{{"name", name},
                                         {"shape", {m.rows(), m.cols()}},
                                         {"dtype", "f32"},
                                         {"offset", offset},
                                         {"length", blob.size() - offset}});
                });
  Json manifest{{"format_version", kCheckpointFormatVersion},
                {"config", config_json(config)},
                {"vocab", vocab_json(vocab)},
                {"blob", blob_name},
                {"blob_length", blob.size()},
                {"tensors", std::move(tensors)}};
  return {to_body(manifest), std::move(blob)};
}

inline void save_checkpoint(const Weights& weights, const ModelConfig& config, const Vocab& vocab,
                            const std::filesystem::path& path) {
  const auto paths = checkpoint_paths(path);
  auto [manifest, blob] =
      encode_checkpoint(weights, config, vocab, paths.blob.filename().string());
  detail::write_file(paths.blob, blob);
  detail::write_file(paths.manifest, manifest);
}

/// Validates a manifest + blob pair and builds the model. Every failure is a
/// CheckpointError with a distinct code.
inline Checkpoint decode_checkpoint(const std::string& manifest_text, const std::string& blob) {
  auto invalid = [](const std::string& msg) {
    return CheckpointError(ErrorCode::manifest_invalid, msg);
  };
  Json manifest;
  try {
    manifest = Json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw invalid(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object()) throw invalid("manifest must be an object");
  if (!manifest.contains("format_version") || !manifest.at("format_version").is_number_integer()) {
    throw invalid("manifest lacks an integer format_version");
  }
  const auto version = manifest.at("format_version").get<long long>();
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(ErrorCode::version_mismatch,
                          "unsupported checkpoint format_version " + std::to_string(version));
  }
  for (const char* key : {"config", "vocab", "tensors", "blob_length"}) {
    if (!manifest.contains(key)) throw invalid(std::string("manifest lacks ") + key);
  }

  Checkpoint ck;
  try {
    ck.config = config_from_json(manifest.at("config"));
  } catch (const Error& e) {
    throw invalid(std::string("bad config: ") + e.what());
  }
  try {
    ck.config.validate();
  } catch (const Error& e) {
    throw CheckpointError(ErrorCode::config_invariant, e.what());
  }
  try {
    ck.vocab = vocab_from_json(manifest.at("vocab"));
  } catch (const Error& e) {
    throw invalid(std::string("bad vocab: ") + e.what());
  }
  if (ck.vocab.size() != ck.config.vocab_size) {
    throw CheckpointError(ErrorCode::config_invariant,
                          "vocab has " + std::to_string(ck.vocab.size()) +
                              " entries but config.vocab_size is " +
                              std::to_string(ck.config.vocab_size));
  }
  if (ck.vocab.lowercase() != ck.config.lowercase) {
    throw CheckpointError(ErrorCode::config_invariant, "vocab and config disagree on lowercase");
  }

  const auto& blob_length_field = manifest.at("blob_length");
  if (!blob_length_field.is_number_unsigned() && !blob_length_field.is_number_integer()) {
    throw invalid("blob_length must be an integer");
  }
  const auto blob_length = blob_length_field.get<std::size_t>();
  if (blob.size() < blob_length) {
    throw CheckpointError(ErrorCode::truncated_blob,
                          "blob has " + std::to_string(blob.size()) + " bytes, manifest declares " +
                              std::to_string(blob_length));
  }
  if (blob.size() > blob_length) {
    throw invalid("blob has trailing bytes beyond declared blob_length");
  }

  // Expected tensors and where each lands.
  struct Slot {
    Matrix* tensor;
    std::size_t rows, cols;
    bool filled = false;
  };
  std::map<std::string, Slot> slots;
  ck.weights.layers.resize(ck.config.n_layers);
  visit_tensors(ck.weights, ck.config,
                [&](const std::string& name, Matrix& m, std::size_t r, std::size_t c) {
                  slots.emplace(name, Slot{&m, r, c});
                });

  const auto& tensors = manifest.at("tensors");
  if (!tensors.is_array()) throw invalid("tensors must be an array");
  std::vector<std::pair<std::size_t, std::size_t>> extents;
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (const auto& t : tensors) {
    std::string name, dtype;
    std::vector<std::size_t> shape;
    std::size_t offset = 0, length = 0;
    try {
      name = t.at("name").get<std::string>();
      dtype = t.at("dtype").get<std::string>();
      shape = t.at("shape").get<std::vector<std::size_t>>();
      offset = t.at("offset").get<std::size_t>();
      length = t.at("length").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw invalid(std::string("malformed tensor entry: ") + e.what());
    }
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(ErrorCode::unknown_tensor, "unknown tensor " + name);
    Slot& slot = it->second;
    if (slot.filled) throw invalid("duplicate tensor " + name);
    if (dtype != "f32") throw invalid("tensor " + name + " has unsupported dtype " + dtype);
    if (shape.size() != 2 || shape[0] != slot.rows || shape[1] != slot.cols) {
      throw CheckpointError(ErrorCode::tensor_shape_mismatch,
                            "tensor " + name + " shape does not match config, expected " +
                                Matrix::shape_string(slot.rows, slot.cols));
    }
    if (length != shape[0] * shape[1] * 4) {
      throw invalid("tensor " + name + " length does not equal its shape times 4 bytes");
    }
    if (offset > blob_length || length > blob_length - offset) {
      throw invalid("tensor " + name + " extends past blob_length");
    }
    extents.emplace_back(offset, length);
    Matrix m(slot.rows, slot.cols);
    auto data = m.data();
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = detail::read_f32_le(bytes + offset + 4 * k);
    *slot.tensor = std::move(m);
    slot.filled = true;
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t k = 1; k < extents.size(); ++k) {
    if (extents[k - 1].first + extents[k - 1].second > extents[k].first) {
      throw invalid("tensor byte ranges overlap");
    }
  }
  for (const auto& [name, slot] : slots) {
    if (!slot.filled) throw CheckpointError(ErrorCode::missing_tensor, "missing tensor " + name);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto paths = checkpoint_paths(path);
  const std::string manifest = detail::read_file(paths.manifest);
  std::filesystem::path blob_path = paths.blob;
  try {
    auto j = Json::parse(manifest);
    if (j.is_object() && j.contains("blob") && j.at("blob").is_string()) {
      blob_path = paths.manifest.parent_path() / j.at("blob").get<std::string>();
    }
  } catch (const nlohmann::json::exception&) {
    // decode_checkpoint reports the parse failure
  }
  return decode_checkpoint(manifest, detail::read_file(blob_path));
}

/// Rounds every weight through float32, matching what a save/load cycle yields.
inline Weights quantize_f32(Weights w, const ModelConfig& config) {
  visit_tensors(w, config, [](const std::string&, Matrix& m, std::size_t, std::size_t) {
    for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
  });
  return w;
}

}  // namespace attnscope
