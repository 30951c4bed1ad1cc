// Evaluation metrics and bag-of-words classifiers, checked against hand
// counts and an independent brute-force BLEU reimplementation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/error.hpp"
#include "attrdial/metrics.hpp"
#include "attrdial/rng.hpp"

using namespace attrdial;

namespace {

std::vector<std::string> toks(const std::string& text) { return tokenize(text); }

// Independent reference implementation of the corpus BLEU defined in
// metrics.hpp: mean over orders 1..4 of BP * p_k with clipped matches,
// add-one smoothing for zero-match orders, orders with no candidate n-grams
// skipped, brevity penalty from the closest (ties -> shorter) reference.
double bleu_brute(const std::vector<std::vector<std::string>>& cands,
                  const std::vector<std::vector<std::vector<std::string>>>& refsets) {
  auto ngrams = [](const std::vector<std::string>& t, int n) {
    std::map<std::string, int> m;
    for (int i = 0; i + n <= static_cast<int>(t.size()); ++i) {
      std::string key;
      for (int j = 0; j < n; ++j) key += t[i + j] + "\x1f";
      m[key]++;
    }
    return m;
  };
  double total = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= 4; ++n) {
    long match = 0, cand_count = 0;
    double cand_len = 0, ref_len = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
      auto cg = ngrams(cands[i], n);
      std::map<std::string, int> best;
      for (const auto& ref : refsets[i]) {
        for (const auto& [k, v] : ngrams(ref, n)) best[k] = std::max(best[k], v);
      }
      for (const auto& [k, v] : cg) {
        cand_count += v;
        auto it = best.find(k);
        if (it != best.end()) match += std::min(v, it->second);
      }
      cand_len += static_cast<double>(cands[i].size());
      // closest reference length, ties toward the shorter
      long bestlen = -1;
      for (const auto& ref : refsets[i]) {
        long rl = static_cast<long>(ref.size());
        if (bestlen < 0 ||
            std::llabs(rl - static_cast<long>(cands[i].size())) <
                std::llabs(bestlen - static_cast<long>(cands[i].size())) ||
            (std::llabs(rl - static_cast<long>(cands[i].size())) ==
                 std::llabs(bestlen - static_cast<long>(cands[i].size())) &&
             rl < bestlen)) {
          bestlen = rl;
        }
      }
      ref_len += static_cast<double>(bestlen);
    }
    if (cand_count == 0) continue;
    double p = match > 0 ? static_cast<double>(match) / cand_count
                         : 1.0 / (cand_count + 1.0);
    double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    total += bp * p;
    used_orders++;
  }
  return used_orders > 0 ? total / used_orders : 0.0;
}

// A classifier that fires on specific token ids: w[token][aspect] = 1.
EvalClassifier marker_classifier(int attribute, size_t vocab_size,
                                 const std::vector<std::vector<int>>& aspect_tokens) {
  EvalClassifier c;
  c.attribute = attribute;
  c.w = Tensor2(static_cast<int>(vocab_size), static_cast<int>(aspect_tokens.size()));
  c.b = Tensor2(1, static_cast<int>(aspect_tokens.size()));
  for (size_t a = 0; a < aspect_tokens.size(); ++a) {
    for (int tok : aspect_tokens[a]) c.w.at(tok, static_cast<int>(a)) = 1.0;
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// distinct-n
// ---------------------------------------------------------------------------

TEST_CASE("distinct-1 of 'a b a b' is 2 unique / 4 total = 0.5") {
  DistinctResult r = distinct_n({toks("a b a b")}, 1);
  CHECK(r.sentence_mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.corpus == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("distinct-1 with all-unique tokens is 1.0") {
  DistinctResult r = distinct_n({toks("a b c d e")}, 1);
  CHECK(r.sentence_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.corpus == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("duplicating a response halves pooled distinct-1 but not the sentence mean") {
  // One copy: sentence 1.0, pooled 2 unique / 2 = 1.0.
  DistinctResult one = distinct_n({toks("a b")}, 1);
  CHECK(one.corpus == doctest::Approx(1.0).epsilon(1e-12));
  // Two copies: per-sentence still 1.0 each; pooled 2 unique / 4 = 0.5.
  DistinctResult two = distinct_n({toks("a b"), toks("a b")}, 1);
  CHECK(two.sentence_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(two.corpus == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("distinct-2 skips responses shorter than the order") {
  // "a" has no bigrams and is excluded; "a b c" has bigrams {a b, b c}.
  DistinctResult r = distinct_n({toks("a"), toks("a b c")}, 2);
  CHECK(r.sentence_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.corpus == doctest::Approx(1.0).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

TEST_CASE("BLEU of a candidate equal to its reference is 1.0") {
  CHECK(bleu({toks("the cat sat down .")}, {toks("the cat sat down .")}) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("BLEU of an empty candidate is 0.0") {
  CHECK(bleu({std::vector<std::string>{}}, {toks("a b c")}) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("BLEU hand case: 'a b c' against 'a b d'") {
  // Unigrams: a, b match -> p1 = 2/3. Bigrams: 'a b' matches, 'b c' does not
  // -> p2 = 1/2. Trigrams: no match, add-one smoothing -> (0+1)/(1+1) = 1/2.
  // 4-grams: none to form -> order skipped. Lengths equal -> BP = 1.
  // Composite = (2/3 + 1/2 + 1/2) / 3 = 5/9.
  const double got = bleu({toks("a b c")}, {toks("a b d")});
  CHECK(got == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
  CHECK(got == doctest::Approx(bleu_brute({toks("a b c")}, {{toks("a b d")}}))
                   .epsilon(1e-12));
}

TEST_CASE("corpus BLEU on mixed candidates matches the brute-force reimplementation") {
  std::vector<std::vector<std::string>> cands = {
      toks("the cat sat on the mat ."), toks("a dog ran far away"),
      toks("hello there world"), toks("one two three four five six")};
  std::vector<std::vector<std::vector<std::string>>> refsets = {
      {toks("the cat sat on a mat .")},
      {toks("the dog ran away quickly"), toks("a dog ran very far")},
      {toks("hello world")},
      {toks("one two three four seven eight nine")}};
  std::vector<std::vector<std::string>> first_refs;
  for (auto& r : refsets) first_refs.push_back(r[0]);
  CHECK(bleu(cands, refsets) == doctest::Approx(bleu_brute(cands, refsets)).epsilon(1e-12));
  // Single-reference overload agrees with a one-reference set per candidate.
  std::vector<std::vector<std::vector<std::string>>> single_sets;
  for (auto& r : first_refs) single_sets.push_back({r});
  CHECK(bleu(cands, first_refs) ==
        doctest::Approx(bleu_brute(cands, single_sets)).epsilon(1e-12));
}

TEST_CASE("BLEU brevity penalty uses the closest reference length") {
  // Candidate length 2, references of lengths 2 and 6: closest is 2 -> BP 1.
  const std::vector<std::vector<std::vector<std::string>>> both = {
      {toks("a b"), toks("a b c d e f")}};
  const double close = bleu({toks("a b")}, both);
  CHECK(close == doctest::Approx(1.0).epsilon(1e-12));
  // Single long reference: BP = exp(1 - 6/2) = exp(-2) scales every order.
  const std::vector<std::vector<std::vector<std::string>>> lone = {
      {toks("a b c d e f")}};
  const double far = bleu({toks("a b")}, lone);
  CHECK(far == doctest::Approx(bleu_brute({toks("a b")}, lone)).epsilon(1e-12));
  CHECK(far < std::exp(-2.0) + 1e-9);
}

TEST_CASE("BLEU with mismatched candidate/reference counts raises InputError") {
  CHECK_THROWS_AS(bleu({toks("a"), toks("b")}, {toks("a")}), InputError);
}

// ---------------------------------------------------------------------------
// self-BLEU
// ---------------------------------------------------------------------------

TEST_CASE("self-BLEU of an identical set is 1.0") {
  std::vector<std::vector<std::string>> rs(5, toks("the same line again"));
  SeededRng rng(3, "selfbleu");
  CHECK(self_bleu(rs, 5, rng) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("self-BLEU of disjoint-vocabulary responses sits at the smoothed floor") {
  std::vector<std::vector<std::string>> rs = {toks("aa bb cc"), toks("dd ee ff"),
                                              toks("gg hh ii"), toks("jj kk ll")};
  SeededRng rng(4, "selfbleu");
  const double v = self_bleu(rs, 4, rng);
  CHECK(v > 0.0);       // add-one smoothing keeps it positive
  CHECK(v < 0.2);       // but near zero
}

TEST_CASE("self-BLEU on a half-identical corpus matches brute force over the full set") {
  std::vector<std::vector<std::string>> rs = {
      toks("alpha beta gamma delta"), toks("alpha beta gamma delta"),
      toks("alpha beta gamma delta"), toks("red green blue"),
      toks("seven eight nine ten"),   toks("lorem ipsum dolor sit")};
  SeededRng rng(5, "selfbleu");
  const double got = self_bleu(rs, static_cast<int>(rs.size()), rng);
  double expect = 0.0;
  for (size_t i = 0; i < rs.size(); ++i) {
    std::vector<std::vector<std::string>> others;
    for (size_t j = 0; j < rs.size(); ++j)
      if (j != i) others.push_back(rs[j]);
    expect += bleu_brute({rs[i]}, {others});
  }
  expect /= static_cast<double>(rs.size());
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("self-BLEU with fewer than two responses raises InputError") {
  SeededRng rng(6, "selfbleu");
  std::vector<std::vector<std::string>> one = {toks("a b")};
  CHECK_THROWS_AS(self_bleu(one, 2, rng), InputError);
}

// ---------------------------------------------------------------------------
// attribute accuracy with hand-built classifiers
// ---------------------------------------------------------------------------

TEST_CASE("attribute accuracy on constructed marker responses") {
  // Vocab ids: 4 and 5 are aspect-0 and aspect-1 markers of attribute 0.
  std::vector<EvalClassifier> cls = {marker_classifier(0, 8, {{4}, {5}})};

  SUBCASE("responses carrying the target's markers score 1.0") {
    AccuracyResult r = attribute_accuracy({{4, 6}, {4, 7}}, {{{0, 0}}, {{0, 0}}}, cls);
    CHECK(r.per_attribute[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.average == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.per_attribute_n[0] == 2);
  }
  SUBCASE("responses carrying only opposite-aspect markers score 0.0") {
    AccuracyResult r = attribute_accuracy({{5, 6}, {5, 7}}, {{{0, 0}}, {{0, 0}}}, cls);
    CHECK(r.per_attribute[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("a half-right set scores exactly 0.5") {
    AccuracyResult r = attribute_accuracy({{4}, {5}, {4}, {5}},
                                          {{{0, 0}}, {{0, 0}}, {{0, 0}}, {{0, 0}}}, cls);
    CHECK(r.per_attribute[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("responses are scored only on targeted attributes") {
    std::vector<EvalClassifier> two = {marker_classifier(0, 8, {{4}, {5}}),
                                       marker_classifier(1, 8, {{6}, {7}})};
    AccuracyResult r = attribute_accuracy({{4}, {7}}, {{{0, 0}}, {{1, 1}}}, two);
    CHECK(r.per_attribute_n[0] == 1);
    CHECK(r.per_attribute_n[1] == 1);
    CHECK(r.average == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("empty response list raises InputError") {
    CHECK_THROWS_AS(attribute_accuracy({}, {}, cls), InputError);
  }
}

// ---------------------------------------------------------------------------
// eval classifiers on generated data
// ---------------------------------------------------------------------------

namespace {

struct SmallCorpus {
  AttributeSchema schema;
  Vocab vocab;
  std::vector<DialogueExample> train;
};

const SmallCorpus& small_corpus() {
  static SmallCorpus sc = [] {
    SmallCorpus s;
    s.schema = default_schema();
    CorpusData data = default_corpus_data();
    CorpusCounts counts;
    counts.train_per_aspect = 200;
    counts.test_total = 48;
    GeneratedCorpus g = gen_corpus(s.schema, data, 31, counts);
    std::vector<std::vector<std::string>> docs;
    for (const RawExample& r : g.train) docs.push_back(tokenize(r.response));
    s.vocab = Vocab::build(docs, 10000);
    for (const RawExample& r : g.train)
      s.train.push_back(encode_example(r, s.vocab, s.schema));
    return s;
  }();
  return sc;
}

}  // namespace

TEST_CASE("trained eval classifiers reach 0.99 holdout accuracy on marker data") {
  const SmallCorpus& sc = small_corpus();
  std::vector<size_t> split_a, split_b;
  for (size_t i = 0; i < sc.train.size(); ++i) (i % 2 ? split_b : split_a).push_back(i);
  EvalClassifierConfig cfg;
  TrainedEvalClassifiers t =
      train_eval_classifiers(sc.schema, sc.vocab, sc.train, split_b, split_a, cfg);
  REQUIRE(t.classifiers.size() == sc.schema.num_attributes());
  for (size_t a = 0; a < t.holdout_accuracy.size(); ++a) {
    CHECK(t.holdout_accuracy[a] >= 0.99);
  }
}

TEST_CASE("label-shuffled control trains to chance-level holdout accuracy") {
  const SmallCorpus& sc = small_corpus();
  // Collect attribute-0 responses and shuffle their labels.
  std::vector<std::vector<int>> responses;
  std::vector<int> labels;
  for (const DialogueExample& e : sc.train) {
    auto it = e.labels.find(0);
    if (it != e.labels.end()) {
      responses.push_back(e.response);
      labels.push_back(it->second);
    }
  }
  SeededRng shuffler(9, "shuffle");
  shuffler.shuffle(labels);
  EvalClassifierConfig cfg;
  SeededRng rng(12, "fit");
  EvalFitResult r =
      fit_eval_classifier(responses, labels, 2, sc.vocab.size(), cfg, rng);
  CHECK(r.holdout_accuracy >= 0.40);
  CHECK(r.holdout_accuracy <= 0.60);
}

TEST_CASE("eval classifier training is deterministic under a fixed seed") {
  const SmallCorpus& sc = small_corpus();
  std::vector<std::vector<int>> responses;
  std::vector<int> labels;
  for (const DialogueExample& e : sc.train) {
    auto it = e.labels.find(1);
    if (it != e.labels.end()) {
      responses.push_back(e.response);
      labels.push_back(it->second);
    }
  }
  EvalClassifierConfig cfg;
  SeededRng r1(7, "fit"), r2(7, "fit");
  EvalFitResult a = fit_eval_classifier(responses, labels, 2, sc.vocab.size(), cfg, r1);
  EvalFitResult b = fit_eval_classifier(responses, labels, 2, sc.vocab.size(), cfg, r2);
  CHECK(a.holdout_accuracy == b.holdout_accuracy);
  CHECK(a.classifier.w.data == b.classifier.w.data);
  CHECK(a.classifier.b.data == b.classifier.b.data);
}

TEST_CASE("shared ids between classifier splits raise ProtocolError") {
  const SmallCorpus& sc = small_corpus();
  std::vector<size_t> split_a = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<size_t> split_b = {4, 8, 9, 10, 11, 12};  // 4 overlaps
  EvalClassifierConfig cfg;
  CHECK_THROWS_AS(
      train_eval_classifiers(sc.schema, sc.vocab, sc.train, split_b, split_a, cfg),
      ProtocolError);
}

TEST_CASE("eval classifier checkpoints round-trip through disk") {
  const SmallCorpus& sc = small_corpus();
  std::vector<size_t> split_a, split_b;
  for (size_t i = 0; i < 64; ++i) (i % 2 ? split_b : split_a).push_back(i);
  EvalClassifierConfig cfg;
  cfg.epochs = 3;
  TrainedEvalClassifiers t =
      train_eval_classifiers(sc.schema, sc.vocab, sc.train, split_b, split_a, cfg);
  const std::string dir = (std::filesystem::temp_directory_path() /
                           "attrdial_test_evalcls").string();
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/eval_style.ckpt";
  save_eval_classifier(path, t.classifiers[0], sc.schema, sc.vocab);
  LoadedEvalClassifier back = load_eval_classifier_full(path);
  CHECK(back.classifier.w.data == t.classifiers[0].w.data);
  CHECK(back.classifier.b.data == t.classifiers[0].b.data);
  CHECK(back.schema.hash_hex() == sc.schema.hash_hex());
  CHECK(back.vocab.hash_hex() == sc.vocab.hash_hex());
  // Hash guards reject a mismatched schema hash.
  CHECK_THROWS_AS(load_eval_classifier(path, "deadbeef", ""), VersionError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

MetricsReport sample_report() {
  MetricsReport r;
  r.attribute_names = {"style", "attitude"};
  r.per_attribute_accuracy = {0.9, 0.8};
  r.per_attribute_n = {40, 40};
  r.average_accuracy = 0.85;
  r.per_combo_accuracy = {{"style=lyrical,attitude=optimistic", 0.75}};
  r.bleu_score = 0.4;
  r.distinct_sentence = {0.8, 0.9, 1.0};
  r.distinct_corpus = {0.1, 0.2, 0.3};
  r.self_bleu_score = 0.7;
  r.response_count = 40;
  r.reference_count = 40;
  r.config_echo = "{\"seed\":1}";
  return r;
}

}  // namespace

TEST_CASE("report JSON round-trips exactly and validates") {
  MetricsReport r = sample_report();
  const std::string text = report_to_json(r);
  validate_report_json(text);
  MetricsReport back = report_from_json(text);
  CHECK(report_to_json(back) == text);
  CHECK(back.average_accuracy == r.average_accuracy);
  CHECK(back.per_combo_accuracy == r.per_combo_accuracy);
  CHECK(back.distinct_corpus == r.distinct_corpus);
}

TEST_CASE("emit_report writes atomically and load_report reads it back") {
  const std::string dir = (std::filesystem::temp_directory_path() /
                           "attrdial_test_report").string();
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/report.json";
  MetricsReport r = sample_report();
  emit_report(r, path);
  CHECK_FALSE(std::filesystem::exists(path + ".partial"));
  MetricsReport back = load_report(path);
  CHECK(report_to_json(back) == report_to_json(r));
  std::filesystem::remove_all(dir);
}

TEST_CASE("emit_report into a missing directory raises an error naming the path") {
  MetricsReport r = sample_report();
  CHECK_THROWS_AS(emit_report(r, "/nonexistent_dir_zz/report.json"), InputError);
}

TEST_CASE("validate_report_json rejects missing keys and out-of-range values") {
  MetricsReport r = sample_report();
  std::string good = report_to_json(r);
  // Accuracy outside [0,1].
  MetricsReport bad = r;
  bad.average_accuracy = 1.5;
  CHECK_THROWS_AS(validate_report_json(report_to_json(bad)), ParseError);
  CHECK_THROWS_AS(validate_report_json("{}"), ParseError);
  CHECK_THROWS_AS(validate_report_json("not json"), ParseError);
}
