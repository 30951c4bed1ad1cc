#include "attrdial/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "attrdial/cvae.hpp"
#include "attrdial/error.hpp"
#include "attrdial/layers.hpp"

namespace attrdial {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Eval classifiers
// ---------------------------------------------------------------------------

std::vector<double> EvalClassifier::logits(const std::vector<int>& token_ids) const {
  std::vector<double> out(b.data.begin(), b.data.end());
  for (int id : token_ids) {
    if (id < 0 || id >= w.rows) {
      throw InputError("eval classifier: token id " + std::to_string(id) +
                       " outside vocab of " + std::to_string(w.rows));
    }
    const double* row = w.row(id);
    for (int j = 0; j < w.cols; ++j) out[j] += row[j];
  }
  return out;
}

int EvalClassifier::predict(const std::vector<int>& token_ids) const {
  const std::vector<double> lg = logits(token_ids);
  return static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
}

void EvalClassifierConfig::validate() const {
  auto fail = [](const std::string& m) {
    throw ValidationError("eval classifier config: " + m);
  };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (!(holdout_frac > 0.0) || holdout_frac >= 1.0) fail("holdout_frac must be in (0, 1)");
}

EvalFitResult fit_eval_classifier(const std::vector<std::vector<int>>& responses,
                                  const std::vector<int>& labels, int n_aspects,
                                  size_t vocab_size, const EvalClassifierConfig& cfg,
                                  SeededRng& rng) {
  cfg.validate();
  if (responses.size() != labels.size()) {
    throw DimensionError("fit_eval_classifier: " + std::to_string(responses.size()) +
                         " responses vs " + std::to_string(labels.size()) + " labels");
  }
  if (responses.empty()) {
    throw InputError("fit_eval_classifier: empty training set");
  }
  if (n_aspects < 2) {
    throw InputError("fit_eval_classifier: need at least 2 aspects");
  }
  const int n = static_cast<int>(responses.size());
  const int vocab = static_cast<int>(vocab_size);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  SeededRng split_rng = rng.substream("split");
  split_rng.shuffle(order);
  const int holdout = std::max(1, static_cast<int>(n * cfg.holdout_frac));
  const int train_n = n - holdout;
  if (train_n < 1) {
    throw InputError("fit_eval_classifier: no training rows after holdout");
  }

  EvalClassifier c;
  c.w = Tensor2(vocab, n_aspects);
  c.b = Tensor2(1, n_aspects);

  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  SeededRng epoch_rng = rng.substream("epochs");
  std::vector<int> train_rows(order.begin(), order.begin() + train_n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SeededRng shuffle_rng = epoch_rng.substream(static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(train_rows);
    for (int start = 0; start < train_n; start += cfg.batch_size) {
      const int b_sz = std::min(cfg.batch_size, train_n - start);
      Tensor2 x(b_sz, vocab);
      std::vector<int> y(b_sz);
      for (int i = 0; i < b_sz; ++i) {
        const int row = train_rows[start + i];
        for (int id : responses[row]) {
          if (id < 0 || id >= vocab) {
            throw InputError("fit_eval_classifier: token id outside vocab");
          }
          x.at(i, id) += 1.0;
        }
        y[i] = labels[row];
      }
      Tensor2 logits = affine_forward(x, c.w, c.b);
      const std::vector<double> row_w(b_sz, 1.0 / b_sz);
      Tensor2 dlogits;
      softmax_cross_entropy(logits, y, row_w, &dlogits);
      AffineBack back = affine_backward(x, c.w, dlogits);
      opt.begin_step();
      opt.update("w", c.w, back.dw);
      opt.update("b", c.b, back.db);
    }
  }

  EvalFitResult res;
  res.train_count = train_n;
  res.holdout_count = holdout;
  int correct = 0;
  for (int i = train_n; i < n; ++i) {
    const int row = order[i];
    correct += c.predict(responses[row]) == labels[row] ? 1 : 0;
  }
  res.holdout_accuracy = static_cast<double>(correct) / holdout;
  res.classifier = std::move(c);
  return res;
}

TrainedEvalClassifiers train_eval_classifiers(const AttributeSchema& schema,
                                              const Vocab& vocab,
                                              const std::vector<DialogueExample>& examples,
                                              const std::vector<size_t>& split_b_ids,
                                              const std::vector<size_t>& split_a_ids,
                                              const EvalClassifierConfig& cfg) {
  cfg.validate();
  const std::set<size_t> a_set(split_a_ids.begin(), split_a_ids.end());
  for (size_t id : split_b_ids) {
    if (a_set.count(id) != 0) {
      throw ProtocolError("eval classifier split shares example " + std::to_string(id) +
                          " with the latent classifier split");
    }
  }
  const int n_attr = static_cast<int>(schema.num_attributes());
  std::vector<std::vector<std::vector<int>>> resp(n_attr);
  std::vector<std::vector<int>> ys(n_attr);
  for (size_t id : split_b_ids) {
    if (id >= examples.size()) {
      throw InputError("train_eval_classifiers: example id " + std::to_string(id) +
                       " outside corpus of " + std::to_string(examples.size()));
    }
    const DialogueExample& ex = examples[id];
    if (ex.labels.size() != 1) {
      throw BatchingError("train_eval_classifiers: example " + std::to_string(id) +
                          " must carry exactly one label");
    }
    const auto [attr, aspect] = *ex.labels.begin();
    if (attr < 0 || attr >= n_attr) {
      throw SchemaError("train_eval_classifiers: attribute index outside schema");
    }
    resp[attr].push_back(ex.response);
    ys[attr].push_back(aspect);
  }

  TrainedEvalClassifiers out;
  out.example_ids = split_b_ids;
  SeededRng base(cfg.seed, "eval-classifiers");
  for (int a = 0; a < n_attr; ++a) {
    if (resp[a].empty()) {
      throw BatchingError("train_eval_classifiers: no examples labeled with attribute " +
                          schema.attributes[a].name);
    }
    SeededRng fit_rng = base.substream("fit-" + schema.attributes[a].name);
    EvalFitResult res =
        fit_eval_classifier(resp[a], ys[a], static_cast<int>(schema.attributes[a].aspects.size()),
                            vocab.size(), cfg, fit_rng);
    res.classifier.attribute = a;
    out.classifiers.push_back(std::move(res.classifier));
    out.holdout_accuracy.push_back(res.holdout_accuracy);
  }
  return out;
}

void save_eval_classifier(const std::string& path, const EvalClassifier& c,
                          const AttributeSchema& schema, const Vocab& vocab) {
  if (c.attribute < 0 || c.attribute >= static_cast<int>(schema.num_attributes())) {
    throw InputError("save_eval_classifier: attribute index outside schema");
  }
  ordered_json meta;
  meta["kind"] = "eval-classifier";
  meta["attribute"] = c.attribute;
  meta["attribute_name"] = schema.attributes[c.attribute].name;
  meta["aspects"] = schema.attributes[c.attribute].aspects;
  meta["schema"] = ordered_json::parse(schema.to_json_string());
  meta["schema_hash"] = schema.hash_hex();
  meta["vocab"] = vocab.tokens;
  meta["vocab_hash"] = vocab.hash_hex();
  std::map<std::string, Tensor2> tensors;
  tensors["w"] = c.w;
  tensors["b"] = c.b;
  save_checkpoint(path, meta.dump(), tensors);
}

EvalClassifier load_eval_classifier(const std::string& path,
                                    const std::string& expected_schema_hash,
                                    const std::string& expected_vocab_hash) {
  Checkpoint ck = load_checkpoint(path);
  json meta = json::parse(ck.meta_json);
  if (!meta.contains("kind") || meta["kind"] != "eval-classifier") {
    throw VersionError("checkpoint " + path + " is not an eval-classifier checkpoint");
  }
  if (!expected_schema_hash.empty() &&
      meta["schema_hash"].get<std::string>() != expected_schema_hash) {
    throw VersionError("eval classifier " + path + " was built for a different schema");
  }
  if (!expected_vocab_hash.empty() &&
      meta["vocab_hash"].get<std::string>() != expected_vocab_hash) {
    throw VersionError("eval classifier " + path + " was built for a different vocab");
  }
  EvalClassifier c;
  c.attribute = meta["attribute"].get<int>();
  auto grab = [&ck, &path](const char* name) -> Tensor2 {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      throw IntegrityError("eval classifier " + path + " is missing tensor " + name);
    }
    return it->second;
  };
  c.w = grab("w");
  c.b = grab("b");
  if (c.w.cols != c.b.cols || c.b.rows != 1) {
    throw IntegrityError("eval classifier " + path + " has inconsistent tensor shapes");
  }
  return c;
}

LoadedEvalClassifier load_eval_classifier_full(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  json meta = json::parse(ck.meta_json);
  if (!meta.contains("kind") || meta["kind"] != "eval-classifier") {
    throw VersionError("checkpoint " + path + " is not an eval-classifier checkpoint");
  }
  LoadedEvalClassifier out;
  out.schema = AttributeSchema::from_json_string(meta["schema"].dump());
  if (meta["schema_hash"].get<std::string>() != out.schema.hash_hex()) {
    throw IntegrityError("eval classifier " + path + " schema hash does not match");
  }
  out.vocab = Vocab::from_tokens(meta["vocab"].get<std::vector<std::string>>());
  if (meta["vocab_hash"].get<std::string>() != out.vocab.hash_hex()) {
    throw IntegrityError("eval classifier " + path + " vocab hash does not match");
  }
  out.classifier = load_eval_classifier(path);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

AccuracyResult attribute_accuracy(const std::vector<std::vector<int>>& responses,
                                  const std::vector<std::map<int, int>>& targets,
                                  const std::vector<EvalClassifier>& classifiers) {
  if (responses.empty()) {
    throw InputError("attribute_accuracy: empty response set");
  }
  if (responses.size() != targets.size()) {
    throw DimensionError("attribute_accuracy: " + std::to_string(responses.size()) +
                         " responses vs " + std::to_string(targets.size()) + " targets");
  }
  const int n_attr = static_cast<int>(classifiers.size());
  AccuracyResult res;
  res.per_attribute.assign(n_attr, 0.0);
  res.per_attribute_n.assign(n_attr, 0);
  std::vector<int> correct(n_attr, 0);
  for (size_t i = 0; i < responses.size(); ++i) {
    for (const auto& [attr, aspect] : targets[i]) {
      if (attr < 0 || attr >= n_attr) {
        throw InputError("attribute_accuracy: target attribute " + std::to_string(attr) +
                         " has no classifier");
      }
      ++res.per_attribute_n[attr];
      if (classifiers[attr].predict(responses[i]) == aspect) ++correct[attr];
    }
  }
  int scored_attrs = 0;
  for (int a = 0; a < n_attr; ++a) {
    if (res.per_attribute_n[a] > 0) {
      res.per_attribute[a] = static_cast<double>(correct[a]) / res.per_attribute_n[a];
      res.average += res.per_attribute[a];
      ++scored_attrs;
    }
  }
  if (scored_attrs > 0) res.average /= scored_attrs;
  return res;
}

namespace {

// N-grams joined with an unlikely separator; order is implicit in the key
// because all keys in one map share the same n.
using NgramCount = std::unordered_map<std::string, int>;

NgramCount ngram_counts(const std::vector<std::string>& tokens, int n) {
  NgramCount counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::vector<std::string>>>& reference_sets) {
  if (candidates.size() != reference_sets.size()) {
    throw InputError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(reference_sets.size()) + " reference sets");
  }
  if (candidates.empty()) {
    throw InputError("bleu: empty candidate list");
  }
  long cand_len = 0, ref_len = 0;
  long match[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& cand = candidates[i];
    const auto& refs = reference_sets[i];
    if (refs.empty()) {
      throw InputError("bleu: candidate " + std::to_string(i) + " has no references");
    }
    cand_len += static_cast<long>(cand.size());
    // Effective reference length: closest to the candidate, ties -> shorter.
    long best_ref = static_cast<long>(refs[0].size());
    for (const auto& r : refs) {
      const long rl = static_cast<long>(r.size());
      const long dc = std::abs(rl - static_cast<long>(cand.size()));
      const long db = std::abs(best_ref - static_cast<long>(cand.size()));
      if (dc < db || (dc == db && rl < best_ref)) best_ref = rl;
    }
    ref_len += best_ref;
    for (int n = 1; n <= 4; ++n) {
      const NgramCount cc = ngram_counts(cand, n);
      if (cc.empty()) continue;
      NgramCount max_ref;
      for (const auto& r : refs) {
        for (const auto& [key, cnt] : ngram_counts(r, n)) {
          int& slot = max_ref[key];
          slot = std::max(slot, cnt);
        }
      }
      for (const auto& [key, cnt] : cc) {
        total[n - 1] += cnt;
        auto it = max_ref.find(key);
        if (it != max_ref.end()) match[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  const double bp =
      cand_len > ref_len ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  double sum = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) continue;  // no candidate n-grams of this order anywhere
    const double p =
        match[n] > 0
            ? static_cast<double>(match[n]) / total[n]
            : (match[n] + 1.0) / (total[n] + 1.0);  // add-one smoothing on zero counts
    sum += bp * p;
    ++orders;
  }
  return orders > 0 ? sum / orders : 0.0;
}

double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) {
    throw InputError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " references");
  }
  std::vector<std::vector<std::vector<std::string>>> sets;
  sets.reserve(references.size());
  for (const auto& r : references) sets.push_back({r});
  return bleu(candidates, sets);
}

DistinctResult distinct_n(const std::vector<std::vector<std::string>>& responses, int n) {
  if (n < 1 || n > 3) {
    throw InputError("distinct_n: n must be 1, 2, or 3; got " + std::to_string(n));
  }
  DistinctResult res;
  std::unordered_set<std::string> pooled_unique;
  long pooled_total = 0;
  double sent_sum = 0.0;
  int sent_count = 0;
  for (const auto& r : responses) {
    const NgramCount counts = ngram_counts(r, n);
    long total = 0;
    for (const auto& [key, cnt] : counts) {
      total += cnt;
      pooled_unique.insert(key);
    }
    pooled_total += total;
    if (total > 0) {
      sent_sum += static_cast<double>(counts.size()) / total;
      ++sent_count;
    }
  }
  res.sentence_mean = sent_count > 0 ? sent_sum / sent_count : 0.0;
  res.corpus =
      pooled_total > 0 ? static_cast<double>(pooled_unique.size()) / pooled_total : 0.0;
  return res;
}

double self_bleu(const std::vector<std::vector<std::string>>& responses, int sample_size,
                 SeededRng& rng) {
  if (responses.size() < 2) {
    throw InputError("self_bleu: need at least 2 responses");
  }
  if (sample_size < 2) {
    throw InputError("self_bleu: sample_size must be at least 2");
  }
  std::vector<size_t> idx(responses.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  const size_t m = std::min(static_cast<size_t>(sample_size), responses.size());
  idx.resize(m);

  double sum = 0.0;
  for (size_t i = 0; i < m; ++i) {
    std::vector<std::vector<std::string>> refs;
    refs.reserve(m - 1);
    for (size_t j = 0; j < m; ++j) {
      if (j != i) refs.push_back(responses[idx[j]]);
    }
    sum += bleu({responses[idx[i]]}, std::vector<std::vector<std::vector<std::string>>>{refs});
  }
  return sum / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::string report_to_json(const MetricsReport& r) {
  if (r.attribute_names.size() != r.per_attribute_accuracy.size() ||
      r.attribute_names.size() != r.per_attribute_n.size()) {
    throw InputError("report_to_json: attribute arrays disagree in length");
  }
  ordered_json root;
  root["version"] = kVersionString;
  root["counts"] = {{"responses", r.response_count}, {"references", r.reference_count}};
  ordered_json per_attr = ordered_json::object();
  ordered_json per_attr_n = ordered_json::object();
  for (size_t i = 0; i < r.attribute_names.size(); ++i) {
    per_attr[r.attribute_names[i]] = r.per_attribute_accuracy[i];
    per_attr_n[r.attribute_names[i]] = r.per_attribute_n[i];
  }
  root["accuracy"] = ordered_json::object();
  root["accuracy"]["per_attribute"] = per_attr;
  root["accuracy"]["per_attribute_n"] = per_attr_n;
  root["accuracy"]["average"] = r.average_accuracy;
  ordered_json combos = ordered_json::object();
  for (const auto& [name, acc] : r.per_combo_accuracy) combos[name] = acc;
  root["per_combo_accuracy"] = combos;
  root["bleu"] = r.bleu_score;
  ordered_json dist_s = ordered_json::object(), dist_c = ordered_json::object();
  for (size_t i = 0; i < r.distinct_sentence.size(); ++i) {
    dist_s[std::to_string(i + 1)] = r.distinct_sentence[i];
  }
  for (size_t i = 0; i < r.distinct_corpus.size(); ++i) {
    dist_c[std::to_string(i + 1)] = r.distinct_corpus[i];
  }
  root["distinct"] = ordered_json::object();
  root["distinct"]["sentence"] = dist_s;
  root["distinct"]["corpus"] = dist_c;
  root["self_bleu"] = r.self_bleu_score;
  root["config"] =
      r.config_echo.empty() ? ordered_json::object() : ordered_json::parse(r.config_echo);
  return root.dump(2);
}

namespace {

void check_rate(const json& v, const std::string& what) {
  if (!v.is_number()) {
    throw ParseError("report: " + what + " is not a number");
  }
  const double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) {
    throw ParseError("report: " + what + " = " + std::to_string(x) + " outside [0, 1]");
  }
}

}  // namespace

void validate_report_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("report is not valid JSON: ") + e.what());
  }
  for (const char* key :
       {"version", "counts", "accuracy", "per_combo_accuracy", "bleu", "distinct",
        "self_bleu", "config"}) {
    if (!root.contains(key)) {
      throw ParseError(std::string("report is missing key '") + key + "'");
    }
  }
  if (!root["version"].is_string()) throw ParseError("report: version is not a string");
  if (!root["counts"].contains("responses") || !root["counts"].contains("references")) {
    throw ParseError("report: counts must carry responses and references");
  }
  const json& acc = root["accuracy"];
  if (!acc.contains("per_attribute") || !acc.contains("average") ||
      !acc.contains("per_attribute_n")) {
    throw ParseError("report: accuracy must carry per_attribute, per_attribute_n, average");
  }
  for (const auto& [name, v] : acc["per_attribute"].items()) {
    check_rate(v, "accuracy.per_attribute." + name);
  }
  check_rate(acc["average"], "accuracy.average");
  for (const auto& [name, v] : root["per_combo_accuracy"].items()) {
    check_rate(v, "per_combo_accuracy." + name);
  }
  check_rate(root["bleu"], "bleu");
  check_rate(root["self_bleu"], "self_bleu");
  for (const char* level : {"sentence", "corpus"}) {
    if (!root["distinct"].contains(level)) {
      throw ParseError(std::string("report: distinct is missing '") + level + "'");
    }
    for (const auto& [name, v] : root["distinct"][level].items()) {
      check_rate(v, std::string("distinct.") + level + "." + name);
    }
  }
  if (!root["config"].is_object()) throw ParseError("report: config is not an object");
}

MetricsReport report_from_json(const std::string& text) {
  validate_report_json(text);
  const json root = json::parse(text);
  MetricsReport r;
  r.response_count = root["counts"]["responses"].get<int>();
  r.reference_count = root["counts"]["references"].get<int>();
  for (const auto& [name, v] : root["accuracy"]["per_attribute"].items()) {
    r.attribute_names.push_back(name);
    r.per_attribute_accuracy.push_back(v.get<double>());
    r.per_attribute_n.push_back(root["accuracy"]["per_attribute_n"][name].get<int>());
  }
  r.average_accuracy = root["accuracy"]["average"].get<double>();
  for (const auto& [name, v] : root["per_combo_accuracy"].items()) {
    r.per_combo_accuracy.emplace_back(name, v.get<double>());
  }
  r.bleu_score = root["bleu"].get<double>();
  for (int n = 1; n <= 3; ++n) {
    const std::string key = std::to_string(n);
    if (root["distinct"]["sentence"].contains(key)) {
      r.distinct_sentence.push_back(root["distinct"]["sentence"][key].get<double>());
    }
    if (root["distinct"]["corpus"].contains(key)) {
      r.distinct_corpus.push_back(root["distinct"]["corpus"][key].get<double>());
    }
  }
  r.self_bleu_score = root["self_bleu"].get<double>();
  r.config_echo = root["config"].dump();
  return r;
}

void emit_report(const MetricsReport& r, const std::string& path) {
  const std::string text = report_to_json(r);
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw InputError("cannot write report: " + tmp);
    }
    out << text << "\n";
    if (!out.good()) {
      throw InputError("write failed for report: " + tmp);
    }
  }
  std::filesystem::rename(tmp, path);
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open report: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace attrdial
