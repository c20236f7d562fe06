#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "qffn/encoder.hpp"
#include "qffn/error.hpp"
#include "qffn/trainer.hpp"

namespace qffn {

using json = nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"hidden", c.hidden},
              {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
              {"intermediate", c.intermediate}, {"max_seq_len", c.max_seq_len},
              {"ffn_kind", to_string(c.ffn_kind)}, {"pqc_layers", c.pqc_layers},
              {"num_classes", c.num_classes}, {"dropout", c.dropout}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.intermediate = j.at("intermediate").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  const auto kind = parse_ffn_kind(j.at("ffn_kind").get<std::string>());
  if (!kind) throw ConfigError("unknown ffn_kind");
  c.ffn_kind = *kind;
  c.pqc_layers = j.at("pqc_layers").get<int>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

/// Shortest decimal that round-trips the double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// metrics.json body. `wall_clock_s` is null when timing is not recorded.
inline json metrics_to_json(const MetricsReport& r, const json& config_echo, bool with_wall_clock) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"train_acc", e.train_acc},
                      {"val_acc", e.val_acc}});
  }
  return json{{"validation_accuracy", r.validation_accuracy},
              {"training_accuracy", r.training_accuracy},
              {"gap", r.gap},
              {"accuracy_per_param", r.accuracy_per_param},
              {"param_total", r.param_total},
              {"epochs", std::move(epochs)},
              {"wall_clock_s", with_wall_clock ? json(r.wall_clock_s) : json(nullptr)},
              {"config_echo", config_echo}};
}

inline std::string epochs_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& e : r.epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss)
        << ',' << format_double(e.train_acc) << ',' << format_double(e.val_acc) << '\n';
  }
  return out.str();
}

/// Writes `contents` to a sibling temp file and renames it over `path`, so the
/// target is either complete or absent.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Weight archive: raw little-endian float32 values of every tensor in
/// `for_each_tensor` order, plus a JSON manifest with names, shapes and byte
/// offsets. Values are narrowed from double on save.
struct WeightArchive {
  std::string blob;
  json manifest;
};

inline WeightArchive pack_weights(const EncoderModel& m) {
  WeightArchive a;
  json tensors = json::array();
  for_each_tensor(m, [&](const std::string& name, const Matrix& t) {
    const std::size_t offset = a.blob.size();
    for (double v : t.flat()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) a.blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"offset", offset},
                       {"nbytes", t.size() * 4}});
  });
  a.manifest = json{{"format", "qffn-weights"},
                    {"version", 1},
                    {"dtype", "float32"},
                    {"endianness", "little"},
                    {"model_config", to_json(m.config)},
                    {"tensors", std::move(tensors)}};
  return a;
}

inline EncoderModel unpack_weights(const WeightArchive& a) {
  if (a.manifest.value("dtype", "") != "float32" || a.manifest.value("endianness", "") != "little") {
    throw IoError("weights manifest: unsupported dtype or byte order");
  }
  EncoderModel m = make_zero_model(model_config_from_json(a.manifest.at("model_config")));
  const auto& tensors = a.manifest.at("tensors");
  std::size_t i = 0;
  for_each_tensor(m, [&](const std::string& name, Matrix& t) {
    if (i >= tensors.size()) throw IoError("weights manifest: missing tensor " + name);
    const auto& e = tensors[i++];
    if (e.at("name").get<std::string>() != name) {
      throw IoError("weights manifest: expected tensor " + name + ", found " +
                    e.at("name").get<std::string>());
    }
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
      throw IoError("weights manifest: shape mismatch for " + name);
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + t.size() * 4 > a.blob.size()) throw IoError("weights blob truncated at " + name);
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(a.blob[offset + 4 * k + b]))
                << (8 * b);
      }
      t.flat()[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
  });
  if (i != tensors.size()) throw IoError("weights manifest lists extra tensors");
  return m;
}

inline void save_weights(const EncoderModel& m, const std::filesystem::path& blob_path,
                         const std::filesystem::path& manifest_path) {
  const auto a = pack_weights(m);
  write_file_atomic(blob_path, a.blob);
  write_file_atomic(manifest_path, a.manifest.dump(2) + "\n");
}

inline EncoderModel load_weights(const std::filesystem::path& blob_path,
                                 const std::filesystem::path& manifest_path) {
  WeightArchive a;
  a.blob = read_file(blob_path);
  try {
    a.manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IoError("weights manifest: " + std::string(e.what()));
  }
  return unpack_weights(a);
}

}  // namespace qffn
