// End-to-end orchestration: a JSON run configuration with fail-fast
// validation, the staged pipeline (corpus -> model -> classifiers -> sampling
// -> evaluation), ablation variants, atomic artifact writes (.partial then
// rename), and a manifest listing every written file with a content hash.
#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/cvae.hpp"
#include "attrdial/latent_space.hpp"
#include "attrdial/metrics.hpp"
#include "attrdial/sampler.hpp"

namespace attrdial {

struct RunConfig {
  std::string out_dir;
  std::string schema_path;  // empty -> built-in default schema
  std::string topics_path;  // empty -> built-in topics

  int train_per_aspect = 6000;
  int test_total = 800;
  size_t vocab_max = 10000;
  uint64_t corpus_seed = 11;

  TrainConfig train;
  LatentClassifierConfig latent;
  EvalClassifierConfig eval;
  SolverConfig solver;

  double lambda_weight = 1.0;
  uint64_t sample_seed = 17;
  uint64_t eval_seed = 23;
  int self_bleu_sample = 150;

  static RunConfig from_json_string(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string to_json_string() const;  // canonical echo, fixed key order

  // Fail fast: referenced paths must exist, counts/seeds/sub-configs must be
  // coherent. Throws ValidationError; nothing is written when this throws.
  void validate() const;
};

// A stage raised; message carries the stage name and the underlying cause.
struct StageFailure : std::runtime_error {
  std::string stage;
  StageFailure(const std::string& stage_name, const std::string& cause)
      : std::runtime_error("stage '" + stage_name + "' failed: " + cause),
        stage(stage_name) {}
};

// Collects written artifacts and writes the closing manifest. All writes are
// atomic: content lands in "<path>.partial" and is renamed on success, so an
// aborted stage leaves only .partial files behind.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string root_dir);

  const std::filesystem::path& root() const { return root_; }
  // Absolute path for a relative artifact; creates parent directories.
  std::string path_for(const std::string& rel) const;
  // Write text atomically and record its hash.
  void write_text(const std::string& rel, const std::string& text);
  // For artifacts written by library savers: give them temp_path_for(rel),
  // then promote(rel) renames the .partial into place and records the hash.
  std::string temp_path_for(const std::string& rel) const;
  void promote(const std::string& rel);
  // For savers that already write atomically to the final path: hash and
  // record the existing file.
  void record(const std::string& rel);

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }
  // manifest.json: version, config echo, sorted file->hash map. The manifest
  // itself is not listed.
  void write_manifest(const std::string& config_echo_json);

 private:
  std::filesystem::path root_;
  std::vector<std::pair<std::string, std::string>> entries_;  // rel path, hash
};

// In-memory results of the staged run.
struct SampleRecord {
  std::vector<std::string> context;  // raw turn strings
  std::string response;              // detokenized text
  double u_start = 0.0;
  double u_end = 0.0;
  std::string spec_json;             // {"terms": [...]}
};

void save_sample_records(const std::string& path, const std::vector<SampleRecord>& recs);
std::vector<SampleRecord> load_sample_records(const std::string& path);

struct PipelineOutcome {
  MetricsReport controlled;
  MetricsReport uncontrolled;
  std::vector<double> latent_holdout_accuracy;
  std::vector<double> eval_holdout_accuracy;
};

// Everything the corpus stage produces, usable in memory by later stages.
struct CorpusBundle {
  AttributeSchema schema;
  Vocab vocab;
  GeneratedCorpus corpus;
  std::vector<DialogueExample> train_enc, test_enc;
  std::vector<size_t> split_a, split_b;
};

// Generates the corpus and writes schema.json, train.jsonl, test.jsonl,
// vocab.json, lexicons.json, splits.json under `prefix` (e.g. "corpus/" or
// "" for a flat directory).
CorpusBundle build_corpus_stage(const RunConfig& cfg, ArtifactWriter& art,
                                const std::string& prefix);

// Loads a directory previously written by build_corpus_stage.
CorpusBundle load_corpus_dir(const std::string& dir);

// Scores sample records against aligned references: attribute accuracy
// (targets come from each record's spec, or from the reference labels when
// the spec is empty), per-combination accuracy, BLEU against the references,
// distinct-1/2/3, and seeded self-BLEU.
MetricsReport evaluate_sample_records(const std::vector<SampleRecord>& records,
                                      const std::vector<RawExample>& refs,
                                      const AttributeSchema& schema, const Vocab& vocab,
                                      const std::vector<EvalClassifier>& classifiers,
                                      uint64_t eval_seed, int self_bleu_sample,
                                      const std::string& config_echo);

// Runs every stage under cfg.out_dir and writes the manifest. Progress lines
// go to `log`. Throws ValidationError before any write, StageFailure after.
PipelineOutcome run_pipeline(const RunConfig& cfg, std::ostream& log);

struct AblationRow {
  std::string variant;  // full, no_ebm, no_lc, no_ld
  double average_accuracy = 0.0;
  std::vector<std::string> attribute_names;
  std::vector<double> per_attribute_accuracy;
};

// Runs the requested variants (full/no_ebm reuse one trained system; no_lc
// and no_ld retrain with the corresponding loss weight zeroed) and writes
// ablation.json plus per-variant artifacts under cfg.out_dir.
std::vector<AblationRow> run_ablation(const RunConfig& cfg,
                                      const std::vector<std::string>& variants,
                                      std::ostream& log);

std::string ablation_to_json(const std::vector<AblationRow>& rows);

// Shared helpers the CLI subcommands build on ------------------------------

// Parity split over [0, n): even indices become split A (latent classifiers),
// odd become split B (eval classifiers).
void parity_splits(size_t n, std::vector<size_t>& split_a, std::vector<size_t>& split_b);

// splits.json persistence: {"latent": [...], "eval": [...]}.
void save_splits_json(const std::string& path, const std::vector<size_t>& split_a,
                      const std::vector<size_t>& split_b);
void load_splits_json(const std::string& path, std::vector<size_t>& split_a,
                      std::vector<size_t>& split_b);

}  // namespace attrdial
