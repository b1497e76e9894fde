#pragma once

// Run configuration and the end-to-end commands behind the `psrp` tool.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psrp/augment.hpp"
#include "psrp/checkpoint.hpp"
#include "psrp/corpus.hpp"
#include "psrp/cpi.hpp"
#include "psrp/encoder.hpp"
#include "psrp/eval.hpp"
#include "psrp/gradcheck.hpp"
#include "psrp/kv.hpp"
#include "psrp/pretrain.hpp"
#include "psrp/synthetic.hpp"

namespace psrp::cli {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "PSRP_OUTPUT_ROOT";

/// Every setting of a run. Built from a key/value document layered over the
/// defaults; racut.n and corpus.l_max fix the encoder's n and f_max.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string dataset;   ///< interaction TSV (corpus.dataset)
  std::string proteins;  ///< protein list for pretraining/export (corpus.proteins)
  std::string dataset_name = "dataset";
  std::string output_dir = "runs";
  std::string split_dir;  ///< where finetune reads split TSVs; default <output>/split
  DatasetSchema schema;
  RAcutConfig racut;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  CpiConfig cpi;
  SplitRatios ratios;
  KeyValues source;  ///< the document the config was built from

  static RunConfig from_kv(const KeyValues& kv) {
    RunConfig c;
    c.source = kv;
    const KvReader r(kv);
    c.seed = r.get_u64("seed", 0);
    c.dataset = r.get("corpus.dataset", "");
    c.proteins = r.get("corpus.proteins", "");
    c.dataset_name = r.get("corpus.name", c.dataset_name);
    c.output_dir = r.get("output.dir", c.output_dir);
    c.split_dir = r.get("finetune.split_dir", "");

    c.schema.l_max = static_cast<int>(r.get_int("corpus.l_max", kDefaultMaxProteinLength));
    c.schema.max_atoms = static_cast<int>(r.get_int("corpus.max_atoms", kDefaultMaxAtoms));
    const auto header = r.get("corpus.header", "auto");
    if (header == "auto") {
      c.schema.header = DatasetSchema::Header::Auto;
    } else if (header == "present") {
      c.schema.header = DatasetSchema::Header::Present;
    } else if (header == "absent") {
      c.schema.header = DatasetSchema::Header::Absent;
    } else {
      throw ParseError("corpus.header must be auto, present or absent; got '" + header + "'");
    }

    c.racut = RAcutConfig::make(static_cast<int>(r.get_int("racut.n", 24)), c.schema.l_max);
    if (r.has("encoder.n") && r.get_int("encoder.n", 0) != c.racut.n) {
      throw ValidationError("encoder.n must equal racut.n");
    }
    KeyValues enc_kv = kv;
    enc_kv["encoder.n"] = std::to_string(c.racut.n);
    enc_kv["encoder.f_max"] = std::to_string(c.racut.f_max);
    enc_kv["encoder.vocab_size"] = std::to_string(ResidueVocabulary::kSize);
    c.encoder = encoder_config_from_kv(enc_kv);

    c.pretrain = pretrain_config_from_kv(kv);
    c.pretrain.global_seed = c.seed;

    CpiConfig cpi_defaults;
    cpi_defaults.max_atoms = c.schema.max_atoms;
    c.cpi = cpi_config_from_kv(kv, cpi_defaults);
    c.cpi.max_atoms = c.schema.max_atoms;
    c.cpi.seed = c.seed;

    c.ratios.train = r.get_double("split.train", c.ratios.train);
    c.ratios.valid = r.get_double("split.valid", c.ratios.valid);
    c.ratios.test = r.get_double("split.test", c.ratios.test);

    const auto known = c.to_kv();
    for (const auto& [key, value] : kv) {
      if (known.count(key) == 0 && key != "encoder.n") throw ParseError("unknown config key '" + key + "'");
    }
    return c;
  }

  static RunConfig defaults() { return from_kv({}); }

  /// Canonical document with every effective setting.
  KeyValues to_kv() const {
    KeyValues kv;
    kv["seed"] = std::to_string(seed);
    kv["corpus.dataset"] = dataset;
    kv["corpus.proteins"] = proteins;
    kv["corpus.name"] = dataset_name;
    kv["corpus.l_max"] = std::to_string(schema.l_max);
    kv["corpus.max_atoms"] = std::to_string(schema.max_atoms);
    kv["corpus.header"] = schema.header == DatasetSchema::Header::Auto
                              ? "auto"
                              : (schema.header == DatasetSchema::Header::Present ? "present" : "absent");
    kv["output.dir"] = output_dir;
    kv["finetune.split_dir"] = split_dir;
    write_kv(racut, kv);
    write_kv(encoder, kv);
    write_kv(pretrain, kv);
    write_kv(cpi, kv);
    kv["split.train"] = format_double(ratios.train);
    kv["split.valid"] = format_double(ratios.valid);
    kv["split.test"] = format_double(ratios.test);
    kv.erase("racut.l_max");  // follows corpus.l_max
    kv.erase("encoder.n");
    kv.erase("encoder.f_max");
    kv.erase("encoder.vocab_size");
    return kv;
  }

  /// Digest of every setting that can change results; output.dir is left out
  /// so that the same run written to two places reports the same value.
  std::string fingerprint() const {
    auto kv = to_kv();
    kv.erase("output.dir");
    return psrp::fingerprint(render_kv_document(kv));
  }

  /// output.dir, placed under $PSRP_OUTPUT_ROOT when relative and the variable is set.
  fs::path output_root() const {
    fs::path p(output_dir);
    if (p.is_relative()) {
      if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') return fs::path(root) / p;
    }
    return p;
  }

  fs::path split_root() const { return split_dir.empty() ? output_root() / "split" : fs::path(split_dir); }
};

inline RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  KeyValues kv;
  if (file) kv = parse_kv_document(read_file(*file), file->string());
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("override '" + o + "' is not key=value");
    auto key = o.substr(0, eq);
    auto value = o.substr(eq + 1);
    kv[key] = value;
  }
  return RunConfig::from_kv(kv);
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline std::string seed_comment(std::uint64_t seed) { return "seed=" + std::to_string(seed); }

// ---------------------------------------------------------------------------
// split

inline std::string partition_file(Scenario s) { return std::string("test_") + scenario_name(s) + ".tsv"; }

struct SplitOutcome {
  ScenarioSplit split;
  KeyValues manifest;
};

/// Writes train.tsv, valid.tsv, the four test_<partition>.tsv files and
/// manifest.txt under <output>/split.
inline SplitOutcome cmd_split(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ValidationError("split: corpus.dataset is not set");
  const auto records = parse_dataset(cfg.dataset, cfg.schema);
  SplitOutcome out{split_scenarios(records, cfg.ratios, cfg.seed), {}};
  const auto dir = cfg.output_root() / "split";
  fs::create_directories(dir);

  const auto write = [&](const std::string& name, const std::vector<InteractionRecord>& recs) {
    std::ostringstream os;
    write_dataset(os, recs, seed_comment(cfg.seed));
    write_text(dir / name, os.str());
  };
  write("train.tsv", out.split.train);
  write("valid.tsv", out.split.valid);
  for (auto s : kScenarios) write(partition_file(s), out.split.partition(s));

  auto& m = out.manifest;
  m["seed"] = std::to_string(cfg.seed);
  m["dataset"] = fs::path(cfg.dataset).filename().string();
  m["records"] = std::to_string(records.size());
  m["ratios"] = format_double(cfg.ratios.train) + "," + format_double(cfg.ratios.valid) + "," +
                format_double(cfg.ratios.test);
  m["count.train"] = std::to_string(out.split.train.size());
  m["count.valid"] = std::to_string(out.split.valid.size());
  m["file.train"] = "train.tsv";
  m["file.valid"] = "valid.tsv";
  for (auto s : kScenarios) {
    m[std::string("count.") + scenario_name(s)] = std::to_string(out.split.partition(s).size());
    m[std::string("file.") + scenario_name(s)] = partition_file(s);
  }
  write_text(dir / "manifest.txt", render_kv_document(m));
  return out;
}

struct LoadedSplit {
  std::vector<InteractionRecord> train, valid;
  std::array<std::vector<InteractionRecord>, 4> test;
};

inline LoadedSplit load_split(const fs::path& dir, const DatasetSchema& schema) {
  LoadedSplit s;
  s.train = parse_dataset(dir / "train.tsv", schema);
  s.valid = parse_dataset(dir / "valid.tsv", schema);
  for (auto sc : kScenarios) s.test[static_cast<int>(sc)] = parse_dataset(dir / partition_file(sc), schema);
  return s;
}

// ---------------------------------------------------------------------------
// pretrain

/// Protein list: one `id<TAB>sequence` or bare `sequence` per line, `#` comments.
struct NamedProtein {
  std::string id;
  std::string sequence;
};

inline std::vector<NamedProtein> read_protein_list(const fs::path& path) {
  if (!fs::exists(path)) throw ParseError("protein file '" + path.string() + "' does not exist");
  std::istringstream in(read_file(path));
  std::vector<NamedProtein> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string_view::npos) {
      out.push_back({"p" + std::to_string(out.size()), std::string(t)});
    } else {
      out.push_back({std::string(detail::trim(t.substr(0, tab))), std::string(detail::trim(t.substr(tab + 1)))});
    }
    if (out.back().sequence.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty sequence");
    }
  }
  return out;
}

inline void write_protein_list(std::ostream& os, const std::vector<std::string>& sequences, std::string_view comment) {
  if (!comment.empty()) os << "# " << comment << '\n';
  for (std::size_t i = 0; i < sequences.size(); ++i) os << 'p' << i << '\t' << sequences[i] << '\n';
}

/// Proteins from corpus.proteins when set, otherwise the proteins of the
/// training split (<split>/train.tsv) or of corpus.dataset.
inline PretrainDataset pretrain_corpus(const RunConfig& cfg) {
  const ResidueVocabulary vocab;
  if (!cfg.proteins.empty()) {
    PretrainDataset ds;
    for (const auto& p : read_protein_list(cfg.proteins)) ds.proteins.push_back(encode_protein(p.sequence, vocab, cfg.schema.l_max));
    return ds;
  }
  const auto train = cfg.split_root() / "train.tsv";
  if (fs::exists(train)) return PretrainDataset::from_training_split(parse_dataset(train, cfg.schema));
  if (!cfg.dataset.empty()) return PretrainDataset::from_training_split(parse_dataset(cfg.dataset, cfg.schema));
  throw ValidationError("pretrain: set corpus.proteins or corpus.dataset, or run split first");
}

/// Trains the encoder; writes last.ckpt, best.ckpt, train_log.csv, vocab.tsv
/// and the effective config under <output>/pretrain.
inline PretrainResult cmd_pretrain(const RunConfig& cfg) {
  cfg.pretrain.validate();
  const auto dir = cfg.output_root() / "pretrain";
  const auto corpus = pretrain_corpus(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.txt", "# " + seed_comment(cfg.seed) + "\n" + render_kv_document(cfg.to_kv()));
  {
    std::ostringstream os;
    ResidueVocabulary().write_table(os);
    write_text(dir / "vocab.tsv", os.str());
  }
  KeyValues extra;
  extra["config.fingerprint"] = cfg.fingerprint();
  return pretrain_run(corpus, cfg.encoder, cfg.racut, cfg.pretrain, {dir, extra});
}

// ---------------------------------------------------------------------------
// finetune

inline EncoderState load_frozen_encoder(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                                        bool random_init) {
  if (checkpoint && random_init) throw ValidationError("finetune: give either --checkpoint or --random-init, not both");
  if (random_init) return init_encoder(cfg.encoder, derive_seed(cfg.seed, seed_stream::kInit));
  if (!checkpoint) throw ValidationError("finetune: --checkpoint is required unless --random-init is given");
  return encoder_from_checkpoint(load_checkpoint(*checkpoint), cfg.encoder);
}

struct FinetuneOutcome {
  FinetuneResult run;
  std::size_t prediction_rows = 0;
};

inline void write_predictions(std::ostream& os, const CpiModel& model, ProteinEmbeddingCache& cache,
                              const std::array<std::vector<InteractionRecord>, 4>& test, std::uint64_t seed) {
  os << "# " << seed_comment(seed) << '\n' << "pair_id,score,label\n";
  for (auto s : kScenarios) {
    const auto& recs = test[static_cast<int>(s)];
    const auto scores = predict_pairs(model, cache, recs);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      os << format_prediction_row({std::string(scenario_name(s)) + ":" + std::to_string(i), scores[i], recs[i].label})
         << '\n';
    }
  }
}

/// Fine-tunes on <split>/train.tsv with model selection on valid.tsv; writes
/// model.ckpt, predictions.csv and finetune_log.csv under <output>/finetune.
inline FinetuneOutcome cmd_finetune(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                                    bool random_init) {
  cfg.cpi.validate();
  const auto encoder = load_frozen_encoder(cfg, checkpoint, random_init);
  const auto split = load_split(cfg.split_root(), cfg.schema);
  const auto dir = cfg.output_root() / "finetune";
  fs::create_directories(dir);

  ProteinEmbeddingCache cache(encoder, cfg.racut);
  FinetuneOutcome out;
  out.run = finetune_run(split.train, split.valid, cache, cfg.cpi, dir / "finetune_log.csv");

  KeyValues extra;
  extra["config.fingerprint"] = cfg.fingerprint();
  extra["encoder.source"] = random_init ? "random-init" : fs::path(*checkpoint).filename().string();
  save_checkpoint(dir / "model.ckpt", make_cpi_checkpoint(out.run.model, &out.run, extra));

  std::ostringstream os;
  write_predictions(os, out.run.model, cache, split.test, cfg.seed);
  write_text(dir / "predictions.csv", os.str());
  for (const auto& p : split.test) out.prediction_rows += p.size();
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

/// Aggregates one prediction file per seed into <output>/report.
inline MetricsReport cmd_evaluate(const RunConfig& cfg, const std::vector<fs::path>& prediction_files) {
  if (prediction_files.empty()) throw ValidationError("evaluate: no prediction files given");
  std::vector<SeedPredictions> seeds;
  for (const auto& f : prediction_files) {
    if (!fs::exists(f)) throw ParseError("prediction file '" + f.string() + "' does not exist");
    seeds.push_back(read_predictions(f));
  }
  return emit_report(cfg.dataset_name, seeds, cfg.output_root() / "report", cfg.fingerprint());
}

// ---------------------------------------------------------------------------
// export-embeddings

struct ExportOutcome {
  std::size_t written = 0;
  std::vector<std::string> skipped;  ///< ids of inadmissible proteins
};

/// One `id` + embed_dim values per admissible protein; proteins shorter than
/// n are skipped and listed in <out>.skipped.
inline ExportOutcome cmd_export_embeddings(const RunConfig& cfg, const fs::path& checkpoint,
                                           const fs::path& protein_file, const fs::path& out_path) {
  const auto encoder = encoder_from_checkpoint(load_checkpoint(checkpoint), cfg.encoder);
  const auto proteins = read_protein_list(protein_file);
  const ResidueVocabulary vocab;
  ExportOutcome out;
  std::ostringstream rows;
  rows << "# " << seed_comment(cfg.seed) << '\n';
  char buf[32];
  for (const auto& p : proteins) {
    const auto rec = encode_protein(p.sequence, vocab, cfg.schema.l_max);
    if (static_cast<int>(rec.tokens.size()) < cfg.racut.n) {
      out.skipped.push_back(p.id);
      continue;
    }
    const auto z = protein_embedding(encoder, rec, cfg.racut);
    rows << p.id;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      std::snprintf(buf, sizeof buf, "\t%.17g", z[i]);
      rows << buf;
    }
    rows << '\n';
    ++out.written;
  }
  write_text(out_path, rows.str());
  std::string skip = "# " + seed_comment(cfg.seed) + "\n# proteins shorter than n=" + std::to_string(cfg.racut.n) + "\n";
  for (const auto& id : out.skipped) skip += id + "\n";
  write_text(fs::path(out_path.string() + ".skipped"), skip);
  return out;
}

// ---------------------------------------------------------------------------
// synth

/// Writes a synthetic motif protein list (kind "motif") or a synthetic
/// interaction TSV (kind "cpi").
inline std::size_t cmd_synth(const std::string& kind, const fs::path& out_path, std::size_t count,
                             std::uint64_t seed, int l_max) {
  std::ostringstream os;
  if (kind == "motif") {
    write_protein_list(os, motif_corpus(count, MotifConfig{}, seed), seed_comment(seed));
  } else if (kind == "cpi") {
    SyntheticCpiConfig sc;
    sc.pairs = count;
    write_dataset(os, synthetic_cpi_task(sc, seed, l_max).records, seed_comment(seed));
  } else {
    throw ValidationError("synth: kind must be 'motif' or 'cpi', got '" + kind + "'");
  }
  write_text(out_path, os.str());
  return count;
}

}  // namespace psrp::cli
