#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qffn/data.hpp"
#include "qffn/diagnostics.hpp"
#include "qffn/encoder.hpp"
#include "qffn/error.hpp"
#include "qffn/serialization.hpp"
#include "qffn/trainer.hpp"

namespace qffn {

struct SynthSpec {
  std::size_t num_train = 400;
  std::size_t num_val = 100;
  std::size_t num_classes = 2;
};

struct FileSpec {
  std::filesystem::path train_path;
  std::filesystem::path val_path;
  std::optional<std::filesystem::path> vocab_path;
  std::optional<std::size_t> num_classes;
};

struct SweepSpec {
  std::vector<int> depths{1, 2, 4, 8};
  std::vector<double> fractions{1.0, 0.2, 0.1};
  bool include_baseline = true;
};

struct ProbeSpec {
  std::vector<int> depths{1, 2, 4, 8};
  std::vector<Variant> variants{Variant::Optimized, Variant::Vanilla};
  std::size_t num_samples = 200;
  int num_qubits = 4;
};

/// One JSON document fully describing a run. All randomness derives from `seed`.
struct RunConfig {
  ModelConfig model;
  bool vocab_size_from_data = true;
  TrainConfig train;
  std::uint64_t seed = 42;
  std::optional<SynthSpec> synth;
  std::optional<FileSpec> files;
  std::filesystem::path output_dir = "runs/out";
  bool strict_depths = true;
  bool record_wall_clock = false;
  SweepSpec sweep;
  ProbeSpec probe;
  json source;              // effective document, echoed into metrics.json
  std::string source_text;  // original file bytes, copied to config.json
};

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!ok.count(key)) throw ConfigError("unknown field '" + where + key + "'");
  }
}

template <class T>
T field(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + where + key + "' has the wrong type");
  }
}

inline Variant parse_variant(const std::string& s, const std::string& where) {
  if (s == "Optimized") return Variant::Optimized;
  if (s == "Vanilla") return Variant::Vanilla;
  throw ConfigError("field '" + where + "' must be Optimized or Vanilla, got '" + s + "'");
}

}  // namespace detail

/// Parses and validates a run document. Every error names the offending field.
inline RunConfig parse_run_config(const json& doc) {
  using detail::field;
  detail::reject_unknown(doc,
                         {"model", "ffn_kind", "pqc_layers", "train", "seed", "synth", "data",
                          "output_dir", "strict_depths", "record_wall_clock", "sweep", "probe"},
                         "");
  RunConfig rc;
  rc.source = doc;
  rc.seed = field<std::uint64_t>(doc, "seed", "", 42);
  rc.strict_depths = field<bool>(doc, "strict_depths", "", true);
  rc.record_wall_clock = field<bool>(doc, "record_wall_clock", "", false);
  rc.output_dir = field<std::string>(doc, "output_dir", "", "runs/out");

  const auto kind_name = field<std::string>(doc, "ffn_kind", "", "Qffn");
  const auto kind = parse_ffn_kind(kind_name);
  if (!kind) {
    throw ConfigError("field 'ffn_kind' must be Classical, Qffn or VanillaQffn, got '" +
                      kind_name + "'");
  }
  rc.model.ffn_kind = *kind;
  rc.model.pqc_layers = field<int>(doc, "pqc_layers", "", 1);
  if (rc.model.pqc_layers < 1) throw ConfigError("field 'pqc_layers' must be >= 1");
  if (rc.strict_depths && !is_standard_depth(rc.model.pqc_layers)) {
    throw ConfigError("field 'pqc_layers' must be one of {1,2,4,8} when strict_depths is set, got " +
                      std::to_string(rc.model.pqc_layers));
  }

  const json model = doc.value("model", json::object());
  detail::reject_unknown(model,
                         {"vocab_size", "hidden", "num_layers", "num_heads", "intermediate",
                          "max_seq_len", "dropout"},
                         "model.");
  if (model.contains("vocab_size")) {
    rc.vocab_size_from_data = false;
    rc.model.vocab_size = field<std::size_t>(model, "vocab_size", "model.", 0);
  }
  rc.model.hidden = field<std::size_t>(model, "hidden", "model.", 128);
  rc.model.num_layers = field<std::size_t>(model, "num_layers", "model.", 2);
  rc.model.num_heads = field<std::size_t>(model, "num_heads", "model.", 2);
  rc.model.intermediate = field<std::size_t>(model, "intermediate", "model.", 512);
  rc.model.max_seq_len = field<std::size_t>(model, "max_seq_len", "model.", 128);
  rc.model.dropout = field<double>(model, "dropout", "model.", 0.0);
  if (rc.model.max_seq_len < 2 || rc.model.max_seq_len > 128) {
    throw ConfigError("field 'model.max_seq_len' must be in [2, 128]");
  }
  if (rc.model.hidden == 0 || rc.model.num_heads == 0 || rc.model.hidden % rc.model.num_heads) {
    throw ConfigError("field 'model.num_heads' must divide 'model.hidden'");
  }
  if (rc.model.num_layers == 0) throw ConfigError("field 'model.num_layers' must be positive");
  if (rc.model.intermediate == 0) throw ConfigError("field 'model.intermediate' must be positive");
  if (!(rc.model.dropout >= 0.0 && rc.model.dropout < 1.0)) {
    throw ConfigError("field 'model.dropout' must be in [0, 1)");
  }

  const json train = doc.value("train", json::object());
  detail::reject_unknown(train, {"learning_rate", "batch_size", "max_epochs", "fraction"},
                         "train.");
  rc.train.learning_rate = field<double>(train, "learning_rate", "train.", 5e-4);
  rc.train.batch_size = field<std::size_t>(train, "batch_size", "train.", 32);
  rc.train.max_epochs = field<std::size_t>(train, "max_epochs", "train.", 5);
  rc.train.fraction = field<double>(train, "fraction", "train.", 1.0);
  rc.train.seed = rc.seed;
  if (!(rc.train.learning_rate >= 0.0)) throw ConfigError("field 'train.learning_rate' must be >= 0");
  if (rc.train.batch_size == 0) throw ConfigError("field 'train.batch_size' must be positive");
  if (rc.train.max_epochs == 0) throw ConfigError("field 'train.max_epochs' must be positive");
  if (!(rc.train.fraction > 0.0 && rc.train.fraction <= 1.0)) {
    throw ConfigError("field 'train.fraction' must be in (0, 1]");
  }

  if (doc.contains("synth") && doc.contains("data")) {
    throw ConfigError("fields 'synth' and 'data' are mutually exclusive");
  }
  if (!doc.contains("data")) {  // synthetic data unless files are given
    const json s = doc.value("synth", json::object());
    detail::reject_unknown(s, {"num_train", "num_val", "num_classes"}, "synth.");
    SynthSpec spec;
    spec.num_train = field<std::size_t>(s, "num_train", "synth.", 400);
    spec.num_val = field<std::size_t>(s, "num_val", "synth.", 100);
    spec.num_classes = field<std::size_t>(s, "num_classes", "synth.", 2);
    if (spec.num_classes < 2 || spec.num_classes > 14) {
      throw ConfigError("field 'synth.num_classes' must be in [2, 14]");
    }
    if (spec.num_train == 0) throw ConfigError("field 'synth.num_train' must be positive");
    if (spec.num_val == 0) throw ConfigError("field 'synth.num_val' must be positive");
    rc.synth = spec;
  } else {
    const json& d = doc.at("data");
    detail::reject_unknown(d, {"train_path", "val_path", "vocab_path", "num_classes"}, "data.");
    FileSpec spec;
    if (!d.contains("train_path")) throw ConfigError("field 'data.train_path' is required");
    if (!d.contains("val_path")) throw ConfigError("field 'data.val_path' is required");
    spec.train_path = field<std::string>(d, "train_path", "data.", "");
    spec.val_path = field<std::string>(d, "val_path", "data.", "");
    if (d.contains("vocab_path")) spec.vocab_path = field<std::string>(d, "vocab_path", "data.", "");
    if (d.contains("num_classes")) {
      spec.num_classes = field<std::size_t>(d, "num_classes", "data.", 2);
      if (*spec.num_classes < 2) throw ConfigError("field 'data.num_classes' must be >= 2");
    }
    for (const auto& [name, p] : {std::pair{"data.train_path", spec.train_path},
                                  std::pair{"data.val_path", spec.val_path}}) {
      if (!std::filesystem::is_regular_file(p)) {
        throw ConfigError(std::string("field '") + name + "': file '" + p.string() +
                          "' does not exist");
      }
    }
    if (spec.vocab_path && !std::filesystem::is_regular_file(*spec.vocab_path)) {
      throw ConfigError("field 'data.vocab_path': file '" + spec.vocab_path->string() +
                        "' does not exist");
    }
    rc.files = spec;
  }

  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    detail::reject_unknown(s, {"depths", "fractions", "include_baseline"}, "sweep.");
    rc.sweep.depths = field<std::vector<int>>(s, "depths", "sweep.", rc.sweep.depths);
    rc.sweep.fractions = field<std::vector<double>>(s, "fractions", "sweep.", rc.sweep.fractions);
    rc.sweep.include_baseline = field<bool>(s, "include_baseline", "sweep.", true);
    for (int d : rc.sweep.depths) {
      if (d < 1 || (rc.strict_depths && !is_standard_depth(d))) {
        throw ConfigError("field 'sweep.depths' contains invalid depth " + std::to_string(d));
      }
    }
    for (double f : rc.sweep.fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("field 'sweep.fractions' must lie in (0, 1]");
    }
  }

  if (doc.contains("probe")) {
    const json& p = doc.at("probe");
    detail::reject_unknown(p, {"depths", "variants", "num_samples", "num_qubits"}, "probe.");
    rc.probe.depths = field<std::vector<int>>(p, "depths", "probe.", rc.probe.depths);
    if (p.contains("variants")) {
      rc.probe.variants.clear();
      for (const auto& v : field<std::vector<std::string>>(p, "variants", "probe.", {})) {
        rc.probe.variants.push_back(detail::parse_variant(v, "probe.variants"));
      }
    }
    rc.probe.num_samples = field<std::size_t>(p, "num_samples", "probe.", 200);
    rc.probe.num_qubits = field<int>(p, "num_qubits", "probe.", 4);
    if (rc.probe.num_samples < 30) {
      throw ConfigError("field 'probe.num_samples' must be >= 30, got " +
                        std::to_string(rc.probe.num_samples));
    }
    if (rc.probe.num_qubits < 1 || rc.probe.num_qubits > kMaxQubits) {
      throw ConfigError("field 'probe.num_qubits' must be in [1, 12]");
    }
    for (int d : rc.probe.depths) {
      if (d < 1) throw ConfigError("field 'probe.depths' must contain positive depths");
    }
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  auto rc = parse_run_config(doc);
  rc.source_text = read_file(path);
  return rc;
}

/// Applies command-line overrides to both the parsed fields and the echoed
/// document.
inline void apply_overrides(RunConfig& rc, const std::optional<std::uint64_t>& seed,
                            const std::optional<std::filesystem::path>& out) {
  if (seed) {
    rc.seed = *seed;
    rc.train.seed = *seed;
    rc.source["seed"] = *seed;
  }
  if (out) {
    rc.output_dir = *out;
    rc.source["output_dir"] = out->string();
  }
}

inline std::string config_copy(const RunConfig& rc) {
  return rc.source_text.empty() ? rc.source.dump(2) + "\n" : rc.source_text;
}

/// Train/validation splits plus the vocabulary used to tokenize them.
struct LoadedData {
  Dataset train;
  Dataset val;
  Vocab vocab;
};

inline LoadedData load_data(const RunConfig& rc) {
  LoadedData d;
  if (rc.synth) {
    d.train = synth_generate(rc.synth->num_train, rc.synth->num_classes, rc.seed, "train");
    d.val = synth_generate(rc.synth->num_val, rc.synth->num_classes, rc.seed + 1, "validation");
  } else {
    d.train = load_tsv(rc.files->train_path, rc.files->num_classes, "train");
    d.val = load_tsv(rc.files->val_path, rc.files->num_classes, "validation");
    const std::size_t classes = std::max(d.train.num_classes, d.val.num_classes);
    d.train.num_classes = d.val.num_classes = classes;
  }
  d.vocab = rc.files && rc.files->vocab_path ? Vocab::load(*rc.files->vocab_path)
                                             : build_vocab({&d.train});
  return d;
}

inline ModelConfig resolve_model_config(const RunConfig& rc, const LoadedData& d) {
  ModelConfig m = rc.model;
  if (rc.vocab_size_from_data) m.vocab_size = d.vocab.size();
  m.num_classes = d.train.num_classes;
  return m;
}

/// Result of a single training cell, as written to disk.
struct CellOutput {
  MetricsReport report;
  ModelConfig model;
};

/// Trains once and writes metrics.json, epochs.csv, timing.json,
/// weights.bin + weights.json, vocab.txt and a verbatim config.json into `out`.
inline CellOutput run_cell(const RunConfig& rc, const LoadedData& data, const ModelConfig& model,
                           const TrainConfig& tc, const std::filesystem::path& out) {
  auto result = train(model, tc, data.vocab, data.train, data.val);
  std::filesystem::create_directories(out);
  write_file_atomic(out / "config.json", config_copy(rc));
  write_file_atomic(out / "vocab.txt", [&] {
    std::ostringstream s;
    for (std::size_t i = 0; i < data.vocab.size(); ++i) s << data.vocab.token(i) << '\n';
    return s.str();
  }());
  save_weights(result.model, out / "weights.bin", out / "weights.json");
  write_file_atomic(out / "epochs.csv", epochs_csv(result.report));
  write_file_atomic(out / "timing.json",
                    json{{"wall_clock_s", result.report.wall_clock_s}}.dump(2) + "\n");
  write_file_atomic(out / "metrics.json",
                    metrics_to_json(result.report, rc.source, rc.record_wall_clock).dump(2) + "\n");
  return {result.report, model};
}

inline std::string summary_line(const MetricsReport& r) {
  std::ostringstream s;
  s << "val_acc=" << format_double(r.validation_accuracy)
    << " train_acc=" << format_double(r.training_accuracy) << " gap=" << format_double(r.gap)
    << " acc_per_param=" << format_double(r.accuracy_per_param)
    << " params=" << r.param_total;
  return s.str();
}

/// `train` subcommand body. Validation and data loading happen before the
/// output directory is touched.
inline MetricsReport cmd_train(const RunConfig& rc, std::ostream& log) {
  const auto data = load_data(rc);
  const auto model = resolve_model_config(rc, data);
  validate(model);
  const auto out = run_cell(rc, data, model, rc.train, rc.output_dir);
  log << summary_line(out.report) << '\n';
  return out.report;
}

struct SweepRow {
  std::string model;
  std::string layers;
  double fraction = 1.0;
  std::optional<MetricsReport> report;
  std::string error;
};

inline std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream s;
  s << "model,layers,fraction,val_acc,train_acc,gap,acc_per_param\n";
  for (const auto& r : rows) {
    if (!r.report) continue;
    s << r.model << ',' << r.layers << ',' << format_double(r.fraction) << ','
      << format_double(r.report->validation_accuracy) << ','
      << format_double(r.report->training_accuracy) << ',' << format_double(r.report->gap) << ','
      << format_double(r.report->accuracy_per_param) << '\n';
  }
  return s.str();
}

/// Depth × fraction grid for `kind`, plus one Classical baseline per fraction.
/// A failing cell is recorded in failures.csv and the sweep continues.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& rc, FfnKind kind, std::ostream& log) {
  const auto data = load_data(rc);
  ModelConfig base = resolve_model_config(rc, data);
  std::filesystem::create_directories(rc.output_dir);
  write_file_atomic(rc.output_dir / "config.json", config_copy(rc));

  std::vector<SweepRow> rows;
  auto run = [&](ModelConfig model, double fraction, const std::string& layers) {
    SweepRow row{to_string(model.ffn_kind), layers, fraction, std::nullopt, {}};
    const std::string cell = row.model + "_L" + layers + "_f" + format_double(fraction);
    TrainConfig tc = rc.train;
    tc.fraction = fraction;
    try {
      validate(model);
      row.report = run_cell(rc, data, model, tc, rc.output_dir / cell).report;
      log << cell << ": " << summary_line(*row.report) << '\n';
    } catch (const std::exception& e) {
      row.error = e.what();
      log << cell << ": FAILED " << row.error << '\n';
    }
    rows.push_back(std::move(row));
  };
  for (double fraction : rc.sweep.fractions) {
    if (rc.sweep.include_baseline) {
      ModelConfig m = base;
      m.ffn_kind = FfnKind::Classical;
      run(m, fraction, "-");
    }
    for (int depth : rc.sweep.depths) {
      ModelConfig m = base;
      m.ffn_kind = kind;
      m.pqc_layers = depth;
      run(m, fraction, std::to_string(depth));
    }
  }
  write_file_atomic(rc.output_dir / "table.csv", sweep_table_csv(rows));
  std::ostringstream failures;
  failures << "model,layers,fraction,error\n";
  bool any = false;
  for (const auto& r : rows) {
    if (r.report) continue;
    any = true;
    json msg = r.error;
    failures << r.model << ',' << r.layers << ',' << format_double(r.fraction) << ','
             << msg.dump() << '\n';
  }
  if (any) write_file_atomic(rc.output_dir / "failures.csv", failures.str());
  return rows;
}

inline std::vector<ProbeResult> cmd_probe(const RunConfig& rc, std::ostream& log) {
  std::vector<ProbeResult> results;
  for (Variant v : rc.probe.variants) {
    results.push_back(grad_variance_probe(v, rc.probe.depths, rc.probe.num_samples, rc.seed,
                                          rc.probe.num_qubits));
    for (const auto& row : results.back().rows) {
      log << to_string(v) << " L=" << row.depth << " var=" << format_double(row.variance) << '\n';
    }
  }
  std::ostringstream csv;
  write_probe_csv(csv, results);
  std::filesystem::create_directories(rc.output_dir);
  write_file_atomic(rc.output_dir / "config.json", config_copy(rc));
  write_file_atomic(rc.output_dir / "probe.csv", csv.str());
  return results;
}

}  // namespace qffn
