// Evaluation: independent bag-of-words attribute classifiers (trained on a
// split disjoint from the latent classifiers' split), attribute accuracy,
// corpus BLEU (mean of per-order BLEU-1..4 with add-one smoothing and brevity
// penalty), distinct-n at sentence and corpus level, seeded self-BLEU, and a
// fixed-key-order JSON report.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/rng.hpp"
#include "attrdial/tensor.hpp"

namespace attrdial {

// Multinomial logistic regression over token counts.
struct EvalClassifier {
  int attribute = 0;
  Tensor2 w;  // vocab x n_aspects
  Tensor2 b;  // 1 x n_aspects

  int num_aspects() const { return w.cols; }
  std::vector<double> logits(const std::vector<int>& token_ids) const;
  int predict(const std::vector<int>& token_ids) const;
};

struct EvalClassifierConfig {
  int epochs = 25;
  int batch_size = 256;
  double lr = 0.05;
  double weight_decay = 0.0;
  double holdout_frac = 0.2;
  uint64_t seed = 2;

  void validate() const;  // throws ValidationError
};

struct EvalFitResult {
  EvalClassifier classifier;
  double holdout_accuracy = 0.0;
  int train_count = 0;
  int holdout_count = 0;
};

// Generic trainer over response token-id lists with labels in [0, n_aspects).
EvalFitResult fit_eval_classifier(const std::vector<std::vector<int>>& responses,
                                  const std::vector<int>& labels, int n_aspects,
                                  size_t vocab_size, const EvalClassifierConfig& cfg,
                                  SeededRng& rng);

struct TrainedEvalClassifiers {
  std::vector<EvalClassifier> classifiers;  // schema order
  std::vector<double> holdout_accuracy;     // per attribute
  std::vector<size_t> example_ids;          // corpus indices consumed (split B)
};

// Trains one classifier per attribute on the responses of `split_b_ids`.
// Any id shared with `split_a_ids` (the latent classifiers' split) raises
// ProtocolError before any training happens.
TrainedEvalClassifiers train_eval_classifiers(const AttributeSchema& schema,
                                              const Vocab& vocab,
                                              const std::vector<DialogueExample>& examples,
                                              const std::vector<size_t>& split_b_ids,
                                              const std::vector<size_t>& split_a_ids,
                                              const EvalClassifierConfig& cfg);

// The checkpoint embeds the full schema and vocab so evaluation can run from
// the classifier files alone.
void save_eval_classifier(const std::string& path, const EvalClassifier& c,
                          const AttributeSchema& schema, const Vocab& vocab);
EvalClassifier load_eval_classifier(const std::string& path,
                                    const std::string& expected_schema_hash = "",
                                    const std::string& expected_vocab_hash = "");
struct LoadedEvalClassifier {
  EvalClassifier classifier;
  AttributeSchema schema;
  Vocab vocab;
};
LoadedEvalClassifier load_eval_classifier_full(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct AccuracyResult {
  std::vector<double> per_attribute;  // classifier order; 0 when never targeted
  std::vector<int> per_attribute_n;   // responses scored per attribute
  double average = 0.0;               // unweighted mean over attributes with n > 0
};

// targets[i] maps attribute index -> expected aspect for response i; a
// response is scored only on the attributes it targets. Empty `responses`
// raises InputError.
AccuracyResult attribute_accuracy(const std::vector<std::vector<int>>& responses,
                                  const std::vector<std::map<int, int>>& targets,
                                  const std::vector<EvalClassifier>& classifiers);

// Corpus BLEU: mean over orders 1..4 of BP * p_k, where p_k uses clipped
// n-gram matches against the best reference count, add-one smoothing replaces
// zero match counts, orders with zero candidate n-grams are skipped, and the
// brevity penalty uses the closest reference length (ties -> shorter). An
// all-empty candidate list or length mismatch raises InputError.
double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::vector<std::string>>>& reference_sets);
// One reference per candidate.
double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::string>>& references);

struct DistinctResult {
  double sentence_mean = 0.0;  // responses shorter than n are excluded
  double corpus = 0.0;         // pooled unique / pooled total
};
DistinctResult distinct_n(const std::vector<std::vector<std::string>>& responses, int n);

// Samples up to sample_size responses without replacement; each is scored by
// BLEU against the remaining sampled responses as references; returns the
// mean. Fewer than 2 responses raises InputError.
double self_bleu(const std::vector<std::vector<std::string>>& responses, int sample_size,
                 SeededRng& rng);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

inline constexpr const char* kVersionString = "attrdial 1.0.0 (artifact format 1)";

struct MetricsReport {
  std::vector<std::string> attribute_names;
  std::vector<double> per_attribute_accuracy;
  std::vector<int> per_attribute_n;
  double average_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_combo_accuracy;
  double bleu_score = 0.0;
  std::vector<double> distinct_sentence;  // n = 1, 2, 3
  std::vector<double> distinct_corpus;
  double self_bleu_score = 0.0;
  int response_count = 0;
  int reference_count = 0;
  std::string config_echo;  // JSON object text; empty means {}
};

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);  // ParseError on bad shape
// Writes atomically (.partial then rename); parent directory must exist.
void emit_report(const MetricsReport& r, const std::string& path);
MetricsReport load_report(const std::string& path);
// Structural check: required keys, types, and [0,1] ranges. Throws ParseError.
void validate_report_json(const std::string& text);

}  // namespace attrdial
