// Command-line front end: corpus generation, model training, classifier
// training, controlled sampling, evaluation, ablation, and the end-to-end
// pipeline. Every subcommand accepts --config plus per-flag overrides; flags
// win over the config file. Exit codes: 0 success, 2 invalid usage or
// configuration, 3 runtime/stage failure, 4 quality gate not met.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attrdial/corpus.hpp"
#include "attrdial/cvae.hpp"
#include "attrdial/error.hpp"
#include "attrdial/latent_space.hpp"
#include "attrdial/metrics.hpp"
#include "attrdial/pipeline.hpp"
#include "attrdial/sampler.hpp"

namespace {

using namespace attrdial;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string version_text() {
  std::string s = kVersionString;
  s += "\n";
  s += "compatibility:\n";
  s += "  checkpoint container format 1: reads yes, writes yes\n";
  s += "  manifest format 1:             reads yes, writes yes\n";
  s += "  report format 1:               reads yes, writes yes\n";
  return s;
}

RunConfig base_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return RunConfig::from_json_file(config_path);
}

Integrator integrator_from(const std::string& s) {
  if (s == "euler") return Integrator::kEuler;
  if (s == "rk4") return Integrator::kRk4;
  throw ValidationError("--integrator must be euler or rk4, got '" + s + "'");
}

DriftForm drift_from(const std::string& s) {
  if (s == "reduced") return DriftForm::kReduced;
  if (s == "full") return DriftForm::kFull;
  throw ValidationError("--drift must be reduced or full, got '" + s + "'");
}

// Reads a JSONL file whose records carry a "context" array of turn strings
// (extra fields such as "response" or "labels" are ignored), so test.jsonl
// files work directly as sampling inputs.
std::vector<std::vector<std::string>> load_contexts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open contexts file: " + path);
  }
  std::vector<std::vector<std::string>> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + " line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("context") || !rec["context"].is_array()) {
      throw ParseError(path + " line " + std::to_string(line_no) +
                       ": expected an object with a \"context\" array");
    }
    std::vector<std::string> turns;
    for (const auto& t : rec["context"]) {
      if (!t.is_string()) {
        throw ParseError(path + " line " + std::to_string(line_no) +
                         ": context turns must be strings");
      }
      turns.push_back(t.get<std::string>());
    }
    if (turns.empty()) {
      throw ParseError(path + " line " + std::to_string(line_no) +
                       ": context must hold at least one turn");
    }
    out.push_back(std::move(turns));
  }
  if (out.empty()) {
    throw InputError("contexts file has no records: " + path);
  }
  return out;
}

// Loads latent_<attribute>.ckpt for every schema attribute, schema-order.
std::vector<LatentClassifier> load_latent_classifier_dir(const std::string& dir,
                                                         const AttributeSchema& schema) {
  std::vector<LatentClassifier> out;
  const std::string expected = schema.hash_hex();
  for (const auto& attr : schema.attributes) {
    const std::filesystem::path p =
        std::filesystem::path(dir) / ("latent_" + attr.name + ".ckpt");
    if (!std::filesystem::exists(p)) {
      throw InputError("classifier directory " + dir + " is missing " +
                       p.filename().string());
    }
    out.push_back(load_latent_classifier(p.string(), expected));
  }
  return out;
}

struct EvalClassifierSet {
  std::vector<EvalClassifier> classifiers;  // schema order
  AttributeSchema schema;
  Vocab vocab;
};

// Loads every eval_*.ckpt in the directory; the files embed the schema and
// vocabulary, so evaluation needs no other inputs. The set must cover every
// schema attribute exactly once and agree on schema/vocab.
EvalClassifierSet load_eval_classifier_dir(const std::string& dir) {
  std::vector<std::string> files;
  if (!std::filesystem::is_directory(dir)) {
    throw InputError("classifier directory does not exist: " + dir);
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("eval_", 0) == 0 && name.size() > 10 &&
        name.substr(name.size() - 5) == ".ckpt") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw InputError("classifier directory " + dir + " holds no eval_*.ckpt files");
  }
  EvalClassifierSet set;
  bool first = true;
  std::string schema_hash, vocab_hash;
  std::vector<LoadedEvalClassifier> loaded;
  for (const std::string& f : files) {
    LoadedEvalClassifier lc = load_eval_classifier_full(f);
    if (first) {
      set.schema = lc.schema;
      set.vocab = lc.vocab;
      schema_hash = lc.schema.hash_hex();
      vocab_hash = lc.vocab.hash_hex();
      first = false;
    } else if (lc.schema.hash_hex() != schema_hash || lc.vocab.hash_hex() != vocab_hash) {
      throw VersionError("classifier files in " + dir +
                         " disagree on schema or vocabulary");
    }
    loaded.push_back(std::move(lc));
  }
  if (loaded.size() != set.schema.num_attributes()) {
    throw InputError("classifier directory " + dir + " holds " +
                     std::to_string(loaded.size()) + " classifiers for " +
                     std::to_string(set.schema.num_attributes()) + " attributes");
  }
  set.classifiers.resize(loaded.size());
  std::vector<bool> seen(loaded.size(), false);
  for (LoadedEvalClassifier& lc : loaded) {
    const int a = lc.classifier.attribute;
    if (a < 0 || a >= static_cast<int>(loaded.size()) || seen[a]) {
      throw InputError("classifier directory " + dir +
                       " does not cover each attribute exactly once");
    }
    seen[a] = true;
    set.classifiers[a] = std::move(lc.classifier);
  }
  return set;
}

void print_accuracy(const AttributeSchema& schema, const std::vector<double>& acc,
                    const char* label) {
  std::cout << label << ":";
  for (size_t a = 0; a < acc.size(); ++a) {
    std::cout << " " << schema.attributes[a].name << "=" << acc[a];
  }
  std::cout << "\n";
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string config, schema, topics, out;
  uint64_t seed = 11;
  int train_per_aspect = 6000;
  int test_total = 800;
  size_t vocab_max = 10000;
};

void add_gen_corpus(CLI::App& app, int& rc) {
  auto args = std::make_shared<GenCorpusArgs>();
  CLI::App* sc = app.add_subcommand(
      "gen-corpus", "Generate the synthetic labeled dialogue corpus");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--schema", args->schema, "Attribute schema JSON (default: built-in)");
  sc->add_option("--topics", args->topics, "Topic list, one per line (default: built-in)");
  sc->add_option("--seed", args->seed, "Corpus RNG seed");
  sc->add_option("--train-per-aspect", args->train_per_aspect,
                 "Training examples per aspect");
  sc->add_option("--test-total", args->test_total, "Total test examples");
  sc->add_option("--vocab-max", args->vocab_max, "Vocabulary size cap");
  sc->add_option("--out", args->out, "Output directory");
  sc->callback([&rc, args, sc]() {
    RunConfig cfg = base_config(args->config);
    if (sc->count("--schema")) cfg.schema_path = args->schema;
    if (sc->count("--topics")) cfg.topics_path = args->topics;
    if (sc->count("--seed")) cfg.corpus_seed = args->seed;
    if (sc->count("--train-per-aspect")) cfg.train_per_aspect = args->train_per_aspect;
    if (sc->count("--test-total")) cfg.test_total = args->test_total;
    if (sc->count("--vocab-max")) cfg.vocab_max = args->vocab_max;
    if (sc->count("--out")) cfg.out_dir = args->out;
    if (cfg.out_dir.empty()) {
      throw ValidationError("gen-corpus: --out (or out_dir in the config) is required");
    }
    cfg.validate();
    ArtifactWriter art(cfg.out_dir);
    const CorpusBundle cs = build_corpus_stage(cfg, art, "");
    art.write_manifest(cfg.to_json_string());
    std::cout << "wrote " << cs.corpus.train.size() << " train / "
              << cs.corpus.test.size() << " test examples, vocab "
              << cs.vocab.tokens.size() << " tokens -> " << cfg.out_dir << "\n";
    rc = 0;
  });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, corpus, out, kl_direction;
  TrainConfig t;
};

void add_train(CLI::App& app, int& rc) {
  auto args = std::make_shared<TrainArgs>();
  CLI::App* sc = app.add_subcommand("train", "Train the dialogue model on a corpus");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--corpus", args->corpus, "Corpus directory from gen-corpus")
      ->required()
      ->check(CLI::ExistingDirectory);
  sc->add_option("--out", args->out, "Output directory for the checkpoint")->required();
  sc->add_option("--latent-dim", args->t.latent_dim, "Latent dimensionality");
  sc->add_option("--hidden-dim", args->t.hidden_dim, "Encoder/decoder hidden size");
  sc->add_option("--emb-dim", args->t.emb_dim, "Token embedding size");
  sc->add_option("--batch-size", args->t.batch_size,
                 "Batch size (must divide by the attribute count)");
  sc->add_option("--epochs", args->t.epochs, "Training epochs");
  sc->add_option("--lr", args->t.lr, "Learning rate");
  sc->add_option("--weight-decay", args->t.weight_decay, "AdamW weight decay");
  sc->add_option("--kl-cycle-len", args->t.kl_cycle_len,
                 "Steps per cyclical KL-weight cycle");
  sc->add_option("--kl-threshold", args->t.kl_threshold, "Per-example KL floor");
  sc->add_option("--w-recon", args->t.w_recon, "Reconstruction loss weight");
  sc->add_option("--w-kl", args->t.w_kl, "KL loss weight");
  sc->add_option("--w-lc", args->t.w_lc, "Aspect classification loss weight");
  sc->add_option("--w-ld", args->t.w_ld, "Attribute distance loss weight");
  sc->add_option("--ld-warmup-epochs", args->t.ld_warmup_epochs,
                 "Epochs before the distance loss activates");
  sc->add_option("--ld-ramp-epochs", args->t.ld_ramp_epochs,
                 "Epochs over which the distance loss ramps to full weight");
  sc->add_option("--ld-threshold", args->t.ld_threshold,
                 "Free-bits floor per attribute-pair mean distance");
  sc->add_option("--clip-norm", args->t.clip_norm, "Global gradient-norm clip");
  sc->add_option("--max-response-len", args->t.max_response_len,
                 "Maximum response length in tokens");
  sc->add_option("--kl-direction", args->kl_direction,
                 "prior_to_posterior or posterior_to_prior")
      ->check(CLI::IsMember({"prior_to_posterior", "posterior_to_prior"}));
  sc->add_option("--seed", args->t.seed, "Training RNG seed");
  sc->callback([&rc, args, sc]() {
    RunConfig cfg = base_config(args->config);
    TrainConfig& t = cfg.train;
    auto set_if = [&sc](const char* flag, auto& dst, const auto& src) {
      if (sc->count(flag)) dst = src;
    };
    set_if("--latent-dim", t.latent_dim, args->t.latent_dim);
    set_if("--hidden-dim", t.hidden_dim, args->t.hidden_dim);
    set_if("--emb-dim", t.emb_dim, args->t.emb_dim);
    set_if("--batch-size", t.batch_size, args->t.batch_size);
    set_if("--epochs", t.epochs, args->t.epochs);
    set_if("--lr", t.lr, args->t.lr);
    set_if("--weight-decay", t.weight_decay, args->t.weight_decay);
    set_if("--kl-cycle-len", t.kl_cycle_len, args->t.kl_cycle_len);
    set_if("--kl-threshold", t.kl_threshold, args->t.kl_threshold);
    set_if("--w-recon", t.w_recon, args->t.w_recon);
    set_if("--w-kl", t.w_kl, args->t.w_kl);
    set_if("--w-lc", t.w_lc, args->t.w_lc);
    set_if("--w-ld", t.w_ld, args->t.w_ld);
    set_if("--ld-warmup-epochs", t.ld_warmup_epochs, args->t.ld_warmup_epochs);
    set_if("--ld-ramp-epochs", t.ld_ramp_epochs, args->t.ld_ramp_epochs);
    set_if("--ld-threshold", t.ld_threshold, args->t.ld_threshold);
    set_if("--clip-norm", t.clip_norm, args->t.clip_norm);
    set_if("--max-response-len", t.max_response_len, args->t.max_response_len);
    if (sc->count("--kl-direction")) {
      t.kl_direction = args->kl_direction == "posterior_to_prior"
                           ? KlDirection::kPosteriorToPrior
                           : KlDirection::kPriorToPosterior;
    }
    set_if("--seed", t.seed, args->t.seed);

    const CorpusBundle cs = load_corpus_dir(args->corpus);
    t.validate(cs.schema);
    std::cout << "training on " << cs.train_enc.size() << " examples, "
              << t.epochs << " epochs\n";
    const TrainResult tr = train_cvae(
        cs.schema, cs.vocab, cs.train_enc, t, [&t](const LossRecord& m) {
          std::fprintf(stderr, "  epoch %d/%d recon %.4f kl %.4f lc %.4f ld %.4f\n",
                       m.epoch, t.epochs, m.recon, m.kl, m.lc, m.ld);
        });
    ArtifactWriter art(args->out);
    save_cvae_checkpoint(art.path_for("cvae.ckpt"), tr.params, cs.schema, cs.vocab);
    art.record("cvae.ckpt");
    save_loss_log_csv(art.temp_path_for("loss_log.csv"), tr.log);
    art.promote("loss_log.csv");
    art.write_manifest(cfg.to_json_string());
    if (!tr.epoch_means.empty()) {
      const LossRecord& last = tr.epoch_means.back();
      std::cout << "final epoch mean loss " << last.total << " (recon " << last.recon
                << ", kl " << last.kl << ", lc " << last.lc << ", ld " << last.ld
                << ")\n";
    }
    std::cout << "wrote " << args->out << "/cvae.ckpt\n";
    rc = 0;
  });
}

// ---------------------------------------------------------------------------
// train-latent-classifiers / train-eval-classifiers
// ---------------------------------------------------------------------------

struct LatentClsArgs {
  std::string config, ckpt, corpus, out;
  LatentClassifierConfig c;
  bool use_prior_encoder = false;
};

void add_train_latent(CLI::App& app, int& rc) {
  auto args = std::make_shared<LatentClsArgs>();
  CLI::App* sc = app.add_subcommand(
      "train-latent-classifiers",
      "Train per-attribute latent-space classifiers on frozen encodings");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--ckpt", args->ckpt, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--corpus", args->corpus, "Corpus directory from gen-corpus")
      ->required()
      ->check(CLI::ExistingDirectory);
  sc->add_option("--out", args->out, "Output directory")->required();
  sc->add_option("--hidden-dim", args->c.hidden_dim, "Classifier hidden size");
  sc->add_option("--epochs", args->c.epochs, "Training epochs");
  sc->add_option("--batch-size", args->c.batch_size, "Batch size");
  sc->add_option("--lr", args->c.lr, "Learning rate");
  sc->add_option("--weight-decay", args->c.weight_decay, "AdamW weight decay");
  sc->add_option("--holdout-frac", args->c.holdout_frac, "Holdout fraction");
  sc->add_flag("--use-prior-encoder", args->use_prior_encoder,
               "Encode with the prior network instead of the posterior");
  sc->add_option("--seed", args->c.seed, "RNG seed");
  sc->callback([&rc, args, sc]() {
    RunConfig cfg = base_config(args->config);
    LatentClassifierConfig& c = cfg.latent;
    auto set_if = [&sc](const char* flag, auto& dst, const auto& src) {
      if (sc->count(flag)) dst = src;
    };
    set_if("--hidden-dim", c.hidden_dim, args->c.hidden_dim);
    set_if("--epochs", c.epochs, args->c.epochs);
    set_if("--batch-size", c.batch_size, args->c.batch_size);
    set_if("--lr", c.lr, args->c.lr);
    set_if("--weight-decay", c.weight_decay, args->c.weight_decay);
    set_if("--holdout-frac", c.holdout_frac, args->c.holdout_frac);
    if (sc->count("--use-prior-encoder")) c.use_prior_encoder = args->use_prior_encoder;
    set_if("--seed", c.seed, args->c.seed);
    c.validate();

    const LoadedCvae model = load_cvae_checkpoint(args->ckpt);
    const CorpusBundle cs = load_corpus_dir(args->corpus);
    if (model.schema.hash_hex() != cs.schema.hash_hex()) {
      throw ValidationError("checkpoint and corpus disagree on the attribute schema");
    }
    if (model.vocab.hash_hex() != cs.vocab.hash_hex()) {
      throw ValidationError("checkpoint and corpus disagree on the vocabulary");
    }
    const TrainedLatentClassifiers tl =
        train_latent_classifiers(model.params, cs.schema, cs.train_enc, cs.split_a, c);
    ArtifactWriter art(args->out);
    for (size_t a = 0; a < tl.classifiers.size(); ++a) {
      const std::string rel = "latent_" + cs.schema.attributes[a].name + ".ckpt";
      save_latent_classifier(art.path_for(rel), tl.classifiers[a], cs.schema);
      art.record(rel);
    }
    art.write_manifest(cfg.to_json_string());
    print_accuracy(cs.schema, tl.holdout_accuracy, "holdout accuracy");
    rc = 0;
  });
}

struct EvalClsArgs {
  std::string config, corpus, out;
  EvalClassifierConfig c;
};

void add_train_eval(CLI::App& app, int& rc) {
  auto args = std::make_shared<EvalClsArgs>();
  CLI::App* sc = app.add_subcommand(
      "train-eval-classifiers",
      "Train per-attribute bag-of-words evaluation classifiers");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--corpus", args->corpus, "Corpus directory from gen-corpus")
      ->required()
      ->check(CLI::ExistingDirectory);
  sc->add_option("--out", args->out, "Output directory")->required();
  sc->add_option("--epochs", args->c.epochs, "Training epochs");
  sc->add_option("--batch-size", args->c.batch_size, "Batch size");
  sc->add_option("--lr", args->c.lr, "Learning rate");
  sc->add_option("--weight-decay", args->c.weight_decay, "Weight decay");
  sc->add_option("--holdout-frac", args->c.holdout_frac, "Holdout fraction");
  sc->add_option("--seed", args->c.seed, "RNG seed");
  sc->callback([&rc, args, sc]() {
    RunConfig cfg = base_config(args->config);
    EvalClassifierConfig& c = cfg.eval;
    auto set_if = [&sc](const char* flag, auto& dst, const auto& src) {
      if (sc->count(flag)) dst = src;
    };
    set_if("--epochs", c.epochs, args->c.epochs);
    set_if("--batch-size", c.batch_size, args->c.batch_size);
    set_if("--lr", c.lr, args->c.lr);
    set_if("--weight-decay", c.weight_decay, args->c.weight_decay);
    set_if("--holdout-frac", c.holdout_frac, args->c.holdout_frac);
    set_if("--seed", c.seed, args->c.seed);
    c.validate();

    const CorpusBundle cs = load_corpus_dir(args->corpus);
    const TrainedEvalClassifiers te = train_eval_classifiers(
        cs.schema, cs.vocab, cs.train_enc, cs.split_b, cs.split_a, c);
    ArtifactWriter art(args->out);
    for (size_t a = 0; a < te.classifiers.size(); ++a) {
      const std::string rel = "eval_" + cs.schema.attributes[a].name + ".ckpt";
      save_eval_classifier(art.path_for(rel), te.classifiers[a], cs.schema, cs.vocab);
      art.record(rel);
    }
    art.write_manifest(cfg.to_json_string());
    print_accuracy(cs.schema, te.holdout_accuracy, "holdout accuracy");
    rc = 0;
  });
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string ckpt, classifiers, attrs, contexts, out;
  std::string integrator = "rk4";
  std::string drift = "reduced";
  double lambda = 1.0;
  double beta_min = 0.1;
  double beta_max = 20.0;
  int steps = 32;
  int max_len = 24;
  uint64_t seed = 17;
};

void add_sample(CLI::App& app, int& rc) {
  auto args = std::make_shared<SampleArgs>();
  CLI::App* sc = app.add_subcommand(
      "sample", "Generate attribute-controlled responses for a context file");
  sc->add_option("--ckpt", args->ckpt, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--classifiers", args->classifiers,
                 "Directory holding latent_<attribute>.ckpt files")
      ->required()
      ->check(CLI::ExistingDirectory);
  sc->add_option("--attrs", args->attrs,
                 "Target spec, e.g. \"style=lyrical,attitude=optimistic\"")
      ->required();
  sc->add_option("--lambda", args->lambda, "Energy weight per term");
  sc->add_option("--steps", args->steps, "Integrator steps");
  sc->add_option("--integrator", args->integrator, "euler or rk4")
      ->check(CLI::IsMember({"euler", "rk4"}));
  sc->add_option("--drift", args->drift, "reduced or full")
      ->check(CLI::IsMember({"reduced", "full"}));
  sc->add_option("--beta-min", args->beta_min, "Schedule start");
  sc->add_option("--beta-max", args->beta_max, "Schedule end");
  sc->add_option("--max-len", args->max_len, "Maximum response length in tokens");
  sc->add_option("--contexts", args->contexts,
                 "JSONL with a \"context\" array per record")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--seed", args->seed, "Sampling RNG seed");
  sc->add_option("--out", args->out, "Output JSONL path")->required();
  sc->callback([&rc, args]() {
    const LoadedCvae model = load_cvae_checkpoint(args->ckpt);
    const std::vector<LatentClassifier> cls =
        load_latent_classifier_dir(args->classifiers, model.schema);
    std::vector<const LatentScorer*> scorers;
    scorers.reserve(cls.size());
    for (const LatentClassifier& c : cls) scorers.push_back(&c);

    const EnergySpec spec = parse_attr_spec(args->attrs, model.schema, args->lambda);
    spec.validate(scorers);
    SolverConfig solver;
    solver.beta_min = args->beta_min;
    solver.beta_max = args->beta_max;
    solver.steps = args->steps;
    solver.integrator = integrator_from(args->integrator);
    solver.drift = drift_from(args->drift);
    solver.validate();

    const std::vector<std::vector<std::string>> contexts = load_contexts(args->contexts);
    const std::string spec_json = spec_to_json(spec, model.schema);
    SeededRng base(args->seed, "sample");
    std::vector<SampleRecord> records;
    records.reserve(contexts.size());
    for (size_t i = 0; i < contexts.size(); ++i) {
      std::vector<std::vector<int>> enc;
      enc.reserve(contexts[i].size());
      for (const std::string& turn : contexts[i]) {
        std::vector<int> ids;
        for (const std::string& tok : tokenize(turn)) ids.push_back(model.vocab.id(tok));
        enc.push_back(std::move(ids));
      }
      SeededRng item_rng = base.substream(static_cast<uint64_t>(i));
      const ControlledSample ctl = sample_controlled(model.params, scorers, spec, enc,
                                                     solver, item_rng, args->max_len);
      SampleRecord rec;
      rec.context = contexts[i];
      std::vector<std::string> toks;
      toks.reserve(ctl.response.size());
      for (int id : ctl.response) toks.push_back(model.vocab.token(id));
      rec.response = detokenize(toks);
      rec.u_start = ctl.u_start;
      rec.u_end = ctl.u_end;
      rec.spec_json = spec_json;
      records.push_back(std::move(rec));
    }
    const std::string tmp = args->out + ".partial";
    save_sample_records(tmp, records);
    std::filesystem::rename(tmp, args->out);
    std::cout << "wrote " << records.size() << " responses -> " << args->out << "\n";
    rc = 0;
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string responses, refs, classifiers, report;
  uint64_t seed = 23;
  int self_bleu_sample = 150;
  double min_mean_accuracy = -1.0;
};

void add_eval(CLI::App& app, int& rc) {
  auto args = std::make_shared<EvalArgs>();
  CLI::App* sc = app.add_subcommand(
      "eval", "Score sampled responses against references and classifiers");
  sc->add_option("--responses", args->responses, "Sampled responses JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--refs", args->refs, "Reference examples JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--classifiers", args->classifiers,
                 "Directory holding eval_<attribute>.ckpt files")
      ->required()
      ->check(CLI::ExistingDirectory);
  sc->add_option("--seed", args->seed, "Self-BLEU sampling seed");
  sc->add_option("--self-bleu-sample", args->self_bleu_sample,
                 "Responses sampled for self-BLEU");
  sc->add_option("--report", args->report, "Report JSON output path")->required();
  sc->add_option("--min-mean-accuracy", args->min_mean_accuracy,
                 "Exit 4 when mean attribute accuracy falls below this gate");
  sc->callback([&rc, args, sc]() {
    const EvalClassifierSet set = load_eval_classifier_dir(args->classifiers);
    const std::vector<SampleRecord> records = load_sample_records(args->responses);
    const std::vector<RawExample> refs = load_jsonl(args->refs, set.schema);
    ordered_json echo;
    echo["responses"] = args->responses;
    echo["refs"] = args->refs;
    echo["classifiers"] = args->classifiers;
    echo["seed"] = args->seed;
    echo["self_bleu_sample"] = args->self_bleu_sample;
    const MetricsReport rep =
        evaluate_sample_records(records, refs, set.schema, set.vocab, set.classifiers,
                                args->seed, args->self_bleu_sample, echo.dump(2));
    emit_report(rep, args->report);
    print_accuracy(set.schema, rep.per_attribute_accuracy, "attribute accuracy");
    std::cout << "mean accuracy " << rep.average_accuracy << ", composite BLEU "
              << rep.bleu_score << ", self-BLEU " << rep.self_bleu_score << "\n";
    std::cout << "wrote " << args->report << "\n";
    rc = 0;
    if (sc->count("--min-mean-accuracy") &&
        rep.average_accuracy < args->min_mean_accuracy) {
      std::cout << "gate: mean accuracy " << rep.average_accuracy << " below "
                << args->min_mean_accuracy << "\n";
      rc = 4;
    }
  });
}

// ---------------------------------------------------------------------------
// pipeline / ablate
// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string config, out;
  int train_per_aspect = 0;
  int test_total = 0;
  int epochs = 0;
  double min_mean_accuracy = -1.0;
};

void apply_pipeline_overrides(const CLI::App* sc, const PipelineArgs& args,
                              RunConfig& cfg) {
  if (sc->count("--out")) cfg.out_dir = args.out;
  if (sc->count("--train-per-aspect")) cfg.train_per_aspect = args.train_per_aspect;
  if (sc->count("--test-total")) cfg.test_total = args.test_total;
  if (sc->count("--epochs")) cfg.train.epochs = args.epochs;
  if (cfg.out_dir.empty()) {
    throw ValidationError("--out (or out_dir in the config) is required");
  }
}

void add_pipeline(CLI::App& app, int& rc) {
  auto args = std::make_shared<PipelineArgs>();
  CLI::App* sc = app.add_subcommand(
      "pipeline", "Run corpus -> train -> classifiers -> sample -> eval end to end");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--out", args->out, "Output directory (overrides config out_dir)");
  sc->add_option("--train-per-aspect", args->train_per_aspect,
                 "Training examples per aspect");
  sc->add_option("--test-total", args->test_total, "Total test examples");
  sc->add_option("--epochs", args->epochs, "Training epochs");
  sc->add_option("--min-mean-accuracy", args->min_mean_accuracy,
                 "Exit 4 when controlled mean accuracy falls below this gate");
  sc->callback([&rc, args, sc]() {
    RunConfig cfg = base_config(args->config);
    apply_pipeline_overrides(sc, *args, cfg);
    const PipelineOutcome out = run_pipeline(cfg, std::cout);
    std::cout << "controlled mean accuracy " << out.controlled.average_accuracy
              << ", uncontrolled " << out.uncontrolled.average_accuracy << "\n";
    rc = 0;
    if (sc->count("--min-mean-accuracy") &&
        out.controlled.average_accuracy < args->min_mean_accuracy) {
      std::cout << "gate: mean accuracy " << out.controlled.average_accuracy
                << " below " << args->min_mean_accuracy << "\n";
      rc = 4;
    }
  });
}

void add_ablate(CLI::App& app, int& rc) {
  auto args = std::make_shared<PipelineArgs>();
  auto variants_csv = std::make_shared<std::string>("full,no_ebm,no_lc,no_ld");
  CLI::App* sc = app.add_subcommand(
      "ablate", "Compare the full system against reduced variants");
  sc->add_option("--config", args->config, "JSON run configuration")
      ->check(CLI::ExistingFile);
  sc->add_option("--out", args->out, "Output directory (overrides config out_dir)");
  sc->add_option("--train-per-aspect", args->train_per_aspect,
                 "Training examples per aspect");
  sc->add_option("--test-total", args->test_total, "Total test examples");
  sc->add_option("--epochs", args->epochs, "Training epochs");
  sc->add_option("--variants", *variants_csv,
                 "Comma list drawn from full,no_ebm,no_lc,no_ld");
  sc->callback([&rc, args, variants_csv, sc]() {
    RunConfig cfg = base_config(args->config);
    apply_pipeline_overrides(sc, *args, cfg);
    std::vector<std::string> variants;
    std::stringstream ss(*variants_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) variants.push_back(item);
    }
    const std::vector<AblationRow> rows = run_ablation(cfg, variants, std::cout);
    std::cout << "variant        mean";
    if (!rows.empty()) {
      for (const std::string& n : rows.front().attribute_names) std::cout << "  " << n;
    }
    std::cout << "\n";
    for (const AblationRow& r : rows) {
      std::cout << r.variant;
      for (size_t pad = r.variant.size(); pad < 15; ++pad) std::cout << ' ';
      std::cout << r.average_accuracy;
      for (double a : r.per_attribute_accuracy) std::cout << "  " << a;
      std::cout << "\n";
    }
    rc = 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-controlled dialogue: corpus, training, sampling, evaluation"};
  app.set_version_flag("--version", version_text());
  app.require_subcommand(1);

  int rc = 0;
  add_gen_corpus(app, rc);
  add_train(app, rc);
  add_train_latent(app, rc);
  add_train_eval(app, rc);
  add_sample(app, rc);
  add_eval(app, rc);
  add_pipeline(app, rc);
  add_ablate(app, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const attrdial::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const attrdial::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const attrdial::StageFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return rc;
}
