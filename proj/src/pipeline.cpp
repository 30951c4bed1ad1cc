#include "attrdial/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "attrdial/error.hpp"
#include "attrdial/hash.hpp"

namespace attrdial {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& obj, const std::string& what,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ValidationError("config: " + what + " must be a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ValidationError("config: unknown key '" + key + "' in " + what);
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: key '") + key + "' has the wrong type");
  }
}

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "prior_to_posterior") return KlDirection::kPriorToPosterior;
  if (s == "posterior_to_prior") return KlDirection::kPosteriorToPrior;
  throw ValidationError("config: kl_direction must be prior_to_posterior or "
                        "posterior_to_prior, got '" + s + "'");
}

std::string kl_direction_name(KlDirection d) {
  return d == KlDirection::kPriorToPosterior ? "prior_to_posterior" : "posterior_to_prior";
}

Integrator parse_integrator(const std::string& s) {
  if (s == "euler") return Integrator::kEuler;
  if (s == "rk4") return Integrator::kRk4;
  throw ValidationError("config: integrator must be euler or rk4, got '" + s + "'");
}

std::string integrator_name(Integrator i) {
  return i == Integrator::kEuler ? "euler" : "rk4";
}

DriftForm parse_drift(const std::string& s) {
  if (s == "reduced") return DriftForm::kReduced;
  if (s == "full") return DriftForm::kFull;
  throw ValidationError("config: drift must be reduced or full, got '" + s + "'");
}

std::string drift_name(DriftForm d) {
  return d == DriftForm::kReduced ? "reduced" : "full";
}

}  // namespace

RunConfig RunConfig::from_json_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "the top level",
             {"out_dir", "schema_path", "topics_path", "corpus", "train",
              "latent_classifiers", "eval_classifiers", "solver", "sampling", "eval"});
  RunConfig cfg;
  cfg.out_dir = get_or<std::string>(root, "out_dir", "");
  cfg.schema_path = get_or<std::string>(root, "schema_path", "");
  cfg.topics_path = get_or<std::string>(root, "topics_path", "");

  if (root.contains("corpus")) {
    const json& c = root["corpus"];
    check_keys(c, "corpus", {"train_per_aspect", "test_total", "vocab_max", "seed"});
    cfg.train_per_aspect = get_or<int>(c, "train_per_aspect", cfg.train_per_aspect);
    cfg.test_total = get_or<int>(c, "test_total", cfg.test_total);
    cfg.vocab_max = get_or<size_t>(c, "vocab_max", cfg.vocab_max);
    cfg.corpus_seed = get_or<uint64_t>(c, "seed", cfg.corpus_seed);
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, "train",
               {"latent_dim", "hidden_dim", "emb_dim", "batch_size", "epochs", "lr",
                "weight_decay", "kl_cycle_len", "kl_threshold", "w_recon", "w_kl",
                "w_lc", "w_ld", "ld_warmup_epochs", "ld_ramp_epochs", "ld_threshold",
                "clip_norm", "max_response_len",
                "kl_direction", "seed"});
    TrainConfig& tc = cfg.train;
    tc.latent_dim = get_or<int>(t, "latent_dim", tc.latent_dim);
    tc.hidden_dim = get_or<int>(t, "hidden_dim", tc.hidden_dim);
    tc.emb_dim = get_or<int>(t, "emb_dim", tc.emb_dim);
    tc.batch_size = get_or<int>(t, "batch_size", tc.batch_size);
    tc.epochs = get_or<int>(t, "epochs", tc.epochs);
    tc.lr = get_or<double>(t, "lr", tc.lr);
    tc.weight_decay = get_or<double>(t, "weight_decay", tc.weight_decay);
    tc.kl_cycle_len = get_or<int>(t, "kl_cycle_len", tc.kl_cycle_len);
    tc.kl_threshold = get_or<double>(t, "kl_threshold", tc.kl_threshold);
    tc.w_recon = get_or<double>(t, "w_recon", tc.w_recon);
    tc.w_kl = get_or<double>(t, "w_kl", tc.w_kl);
    tc.w_lc = get_or<double>(t, "w_lc", tc.w_lc);
    tc.w_ld = get_or<double>(t, "w_ld", tc.w_ld);
    tc.ld_warmup_epochs = get_or<int>(t, "ld_warmup_epochs", tc.ld_warmup_epochs);
    tc.ld_ramp_epochs = get_or<int>(t, "ld_ramp_epochs", tc.ld_ramp_epochs);
    tc.ld_threshold = get_or<double>(t, "ld_threshold", tc.ld_threshold);
    tc.clip_norm = get_or<double>(t, "clip_norm", tc.clip_norm);
    tc.max_response_len = get_or<int>(t, "max_response_len", tc.max_response_len);
    if (t.contains("kl_direction")) {
      tc.kl_direction = parse_kl_direction(t["kl_direction"].get<std::string>());
    }
    tc.seed = get_or<uint64_t>(t, "seed", tc.seed);
  }
  if (root.contains("latent_classifiers")) {
    const json& l = root["latent_classifiers"];
    check_keys(l, "latent_classifiers",
               {"hidden_dim", "epochs", "batch_size", "lr", "weight_decay",
                "holdout_frac", "use_prior_encoder", "seed"});
    LatentClassifierConfig& lc = cfg.latent;
    lc.hidden_dim = get_or<int>(l, "hidden_dim", lc.hidden_dim);
    lc.epochs = get_or<int>(l, "epochs", lc.epochs);
    lc.batch_size = get_or<int>(l, "batch_size", lc.batch_size);
    lc.lr = get_or<double>(l, "lr", lc.lr);
    lc.weight_decay = get_or<double>(l, "weight_decay", lc.weight_decay);
    lc.holdout_frac = get_or<double>(l, "holdout_frac", lc.holdout_frac);
    lc.use_prior_encoder = get_or<bool>(l, "use_prior_encoder", lc.use_prior_encoder);
    lc.seed = get_or<uint64_t>(l, "seed", lc.seed);
  }
  if (root.contains("eval_classifiers")) {
    const json& e = root["eval_classifiers"];
    check_keys(e, "eval_classifiers",
               {"epochs", "batch_size", "lr", "weight_decay", "holdout_frac", "seed"});
    EvalClassifierConfig& ec = cfg.eval;
    ec.epochs = get_or<int>(e, "epochs", ec.epochs);
    ec.batch_size = get_or<int>(e, "batch_size", ec.batch_size);
    ec.lr = get_or<double>(e, "lr", ec.lr);
    ec.weight_decay = get_or<double>(e, "weight_decay", ec.weight_decay);
    ec.holdout_frac = get_or<double>(e, "holdout_frac", ec.holdout_frac);
    ec.seed = get_or<uint64_t>(e, "seed", ec.seed);
  }
  if (root.contains("solver")) {
    const json& s = root["solver"];
    check_keys(s, "solver", {"beta_min", "beta_max", "steps", "integrator", "drift"});
    cfg.solver.beta_min = get_or<double>(s, "beta_min", cfg.solver.beta_min);
    cfg.solver.beta_max = get_or<double>(s, "beta_max", cfg.solver.beta_max);
    cfg.solver.steps = get_or<int>(s, "steps", cfg.solver.steps);
    if (s.contains("integrator")) {
      cfg.solver.integrator = parse_integrator(s["integrator"].get<std::string>());
    }
    if (s.contains("drift")) {
      cfg.solver.drift = parse_drift(s["drift"].get<std::string>());
    }
  }
  if (root.contains("sampling")) {
    const json& s = root["sampling"];
    check_keys(s, "sampling", {"lambda", "seed"});
    cfg.lambda_weight = get_or<double>(s, "lambda", cfg.lambda_weight);
    cfg.sample_seed = get_or<uint64_t>(s, "seed", cfg.sample_seed);
  }
  if (root.contains("eval")) {
    const json& e = root["eval"];
    check_keys(e, "eval", {"seed", "self_bleu_sample"});
    cfg.eval_seed = get_or<uint64_t>(e, "seed", cfg.eval_seed);
    cfg.self_bleu_sample = get_or<int>(e, "self_bleu_sample", cfg.self_bleu_sample);
  }
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open config file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

std::string RunConfig::to_json_string() const {
  ordered_json root;
  root["out_dir"] = out_dir;
  root["schema_path"] = schema_path;
  root["topics_path"] = topics_path;
  root["corpus"] = {{"train_per_aspect", train_per_aspect},
                    {"test_total", test_total},
                    {"vocab_max", vocab_max},
                    {"seed", corpus_seed}};
  root["train"] = {{"latent_dim", train.latent_dim},
                   {"hidden_dim", train.hidden_dim},
                   {"emb_dim", train.emb_dim},
                   {"batch_size", train.batch_size},
                   {"epochs", train.epochs},
                   {"lr", train.lr},
                   {"weight_decay", train.weight_decay},
                   {"kl_cycle_len", train.kl_cycle_len},
                   {"kl_threshold", train.kl_threshold},
                   {"w_recon", train.w_recon},
                   {"w_kl", train.w_kl},
                   {"w_lc", train.w_lc},
                   {"w_ld", train.w_ld},
                   {"ld_warmup_epochs", train.ld_warmup_epochs},
                   {"ld_ramp_epochs", train.ld_ramp_epochs},
                   {"ld_threshold", train.ld_threshold},
                   {"clip_norm", train.clip_norm},
                   {"max_response_len", train.max_response_len},
                   {"kl_direction", kl_direction_name(train.kl_direction)},
                   {"seed", train.seed}};
  root["latent_classifiers"] = {{"hidden_dim", latent.hidden_dim},
                                {"epochs", latent.epochs},
                                {"batch_size", latent.batch_size},
                                {"lr", latent.lr},
                                {"weight_decay", latent.weight_decay},
                                {"holdout_frac", latent.holdout_frac},
                                {"use_prior_encoder", latent.use_prior_encoder},
                                {"seed", latent.seed}};
  root["eval_classifiers"] = {{"epochs", eval.epochs},
                              {"batch_size", eval.batch_size},
                              {"lr", eval.lr},
                              {"weight_decay", eval.weight_decay},
                              {"holdout_frac", eval.holdout_frac},
                              {"seed", eval.seed}};
  root["solver"] = {{"beta_min", solver.beta_min},
                    {"beta_max", solver.beta_max},
                    {"steps", solver.steps},
                    {"integrator", integrator_name(solver.integrator)},
                    {"drift", drift_name(solver.drift)}};
  root["sampling"] = {{"lambda", lambda_weight}, {"seed", sample_seed}};
  root["eval"] = {{"seed", eval_seed}, {"self_bleu_sample", self_bleu_sample}};
  return root.dump(2);
}

void RunConfig::validate() const {
  if (out_dir.empty()) {
    throw ValidationError("config: out_dir is required");
  }
  if (!schema_path.empty() && !std::filesystem::exists(schema_path)) {
    throw ValidationError("config: schema_path does not exist: " + schema_path);
  }
  if (!topics_path.empty() && !std::filesystem::exists(topics_path)) {
    throw ValidationError("config: topics_path does not exist: " + topics_path);
  }
  if (train_per_aspect < 10) {
    throw ValidationError("config: train_per_aspect must be at least 10");
  }
  if (vocab_max < Vocab::reserved_tokens().size()) {
    throw ValidationError("config: vocab_max below the reserved token count");
  }
  AttributeSchema schema =
      schema_path.empty() ? default_schema() : AttributeSchema::load(schema_path);
  schema.validate();
  if (test_total < static_cast<int>(schema.combo_count())) {
    throw ValidationError("config: test_total " + std::to_string(test_total) +
                          " below the " + std::to_string(schema.combo_count()) +
                          " attribute combinations");
  }
  train.validate(schema);
  latent.validate();
  eval.validate();
  solver.validate();
  if (!std::isfinite(lambda_weight) || lambda_weight < 0.0) {
    throw ValidationError("config: sampling lambda must be finite and non-negative");
  }
  if (self_bleu_sample < 2) {
    throw ValidationError("config: self_bleu_sample must be at least 2");
  }
}

// ---------------------------------------------------------------------------
// ArtifactWriter
// ---------------------------------------------------------------------------

ArtifactWriter::ArtifactWriter(std::string root_dir) : root_(std::move(root_dir)) {
  std::filesystem::create_directories(root_);
}

std::string ArtifactWriter::path_for(const std::string& rel) const {
  const std::filesystem::path p = root_ / rel;
  std::filesystem::create_directories(p.parent_path());
  return p.string();
}

std::string ArtifactWriter::temp_path_for(const std::string& rel) const {
  return path_for(rel) + ".partial";
}

void ArtifactWriter::promote(const std::string& rel) {
  const std::string final_path = path_for(rel);
  std::filesystem::rename(final_path + ".partial", final_path);
  entries_.emplace_back(rel, hash_file_hex(final_path));
}

void ArtifactWriter::record(const std::string& rel) {
  entries_.emplace_back(rel, hash_file_hex(path_for(rel)));
}

void ArtifactWriter::write_text(const std::string& rel, const std::string& text) {
  const std::string tmp = temp_path_for(rel);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw InputError("cannot write artifact: " + tmp);
    }
    out << text;
    if (!out.good()) {
      throw InputError("write failed for artifact: " + tmp);
    }
  }
  promote(rel);
}

void ArtifactWriter::write_manifest(const std::string& config_echo_json) {
  ordered_json root;
  root["version"] = kVersionString;
  root["format_version"] = kFormatVersion;
  root["config"] = ordered_json::parse(config_echo_json);
  std::map<std::string, std::string> sorted(entries_.begin(), entries_.end());
  ordered_json files = ordered_json::object();
  for (const auto& [rel, hash] : sorted) files[rel] = hash;
  root["files"] = files;
  const std::string path = path_for("manifest.json");
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw InputError("cannot write manifest: " + tmp);
    }
    out << root.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Splits and sample records
// ---------------------------------------------------------------------------

void parity_splits(size_t n, std::vector<size_t>& split_a, std::vector<size_t>& split_b) {
  split_a.clear();
  split_b.clear();
  for (size_t i = 0; i < n; ++i) {
    (i % 2 == 0 ? split_a : split_b).push_back(i);
  }
}

void save_splits_json(const std::string& path, const std::vector<size_t>& split_a,
                      const std::vector<size_t>& split_b) {
  ordered_json root;
  root["latent"] = split_a;
  root["eval"] = split_b;
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write splits file: " + path);
  }
  out << root.dump() << "\n";
}

void load_splits_json(const std::string& path, std::vector<size_t>& split_a,
                      std::vector<size_t>& split_b) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open splits file: " + path);
  }
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("splits file " + path + " is not valid JSON: " + e.what());
  }
  if (!root.contains("latent") || !root.contains("eval")) {
    throw ParseError("splits file " + path + " must carry 'latent' and 'eval' arrays");
  }
  split_a = root["latent"].get<std::vector<size_t>>();
  split_b = root["eval"].get<std::vector<size_t>>();
}

void save_sample_records(const std::string& path, const std::vector<SampleRecord>& recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write sample records: " + path);
  }
  for (const SampleRecord& r : recs) {
    ordered_json rec;
    rec["context"] = r.context;
    rec["response"] = r.response;
    rec["u_start"] = r.u_start;
    rec["u_end"] = r.u_end;
    rec["spec"] = ordered_json::parse(r.spec_json);
    out << rec.dump() << "\n";
  }
  if (!out.good()) {
    throw InputError("write failed for sample records: " + path);
  }
}

std::vector<SampleRecord> load_sample_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open sample records: " + path);
  }
  std::vector<SampleRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("sample records " + path + " line " + std::to_string(line_no) +
                       ": " + e.what());
    }
    for (const char* key : {"context", "response", "u_start", "u_end", "spec"}) {
      if (!rec.contains(key)) {
        throw ParseError("sample records " + path + " line " + std::to_string(line_no) +
                         ": missing '" + key + "'");
      }
    }
    SampleRecord r;
    r.context = rec["context"].get<std::vector<std::string>>();
    r.response = rec["response"].get<std::string>();
    r.u_start = rec["u_start"].get<double>();
    r.u_end = rec["u_end"].get<double>();
    r.spec_json = rec["spec"].dump();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus stage
// ---------------------------------------------------------------------------

CorpusBundle build_corpus_stage(const RunConfig& cfg, ArtifactWriter& art,
                                const std::string& prefix) {
  CorpusBundle st;
  st.schema =
      cfg.schema_path.empty() ? default_schema() : AttributeSchema::load(cfg.schema_path);
  st.schema.validate();
  const std::vector<std::string> topics =
      cfg.topics_path.empty() ? default_topics() : load_topics(cfg.topics_path);
  const CorpusData data = corpus_data_for(st.schema, topics);
  validate_corpus_material(st.schema, data);

  CorpusCounts counts;
  counts.train_per_aspect = cfg.train_per_aspect;
  counts.test_total = cfg.test_total;
  st.corpus = gen_corpus(st.schema, data, cfg.corpus_seed, counts);

  std::vector<std::vector<std::string>> docs;
  docs.reserve(2 * (st.corpus.train.size() + st.corpus.test.size()));
  for (const auto* side : {&st.corpus.train, &st.corpus.test}) {
    for (const RawExample& ex : *side) {
      for (const std::string& turn : ex.context) docs.push_back(tokenize(turn));
      docs.push_back(tokenize(ex.response));
    }
  }
  st.vocab = Vocab::build(docs, cfg.vocab_max);

  st.train_enc.reserve(st.corpus.train.size());
  for (const RawExample& ex : st.corpus.train) {
    st.train_enc.push_back(encode_example(ex, st.vocab, st.schema));
  }
  st.test_enc.reserve(st.corpus.test.size());
  for (const RawExample& ex : st.corpus.test) {
    st.test_enc.push_back(encode_example(ex, st.vocab, st.schema));
  }
  parity_splits(st.corpus.train.size(), st.split_a, st.split_b);

  st.schema.save(art.temp_path_for(prefix + "schema.json"));
  art.promote(prefix + "schema.json");
  save_jsonl(art.temp_path_for(prefix + "train.jsonl"), st.corpus.train);
  art.promote(prefix + "train.jsonl");
  save_jsonl(art.temp_path_for(prefix + "test.jsonl"), st.corpus.test);
  art.promote(prefix + "test.jsonl");
  st.vocab.save(art.temp_path_for(prefix + "vocab.json"));
  art.promote(prefix + "vocab.json");
  art.write_text(prefix + "lexicons.json", data.lexicons_json(st.schema));
  save_splits_json(art.temp_path_for(prefix + "splits.json"), st.split_a, st.split_b);
  art.promote(prefix + "splits.json");
  return st;
}

CorpusBundle load_corpus_dir(const std::string& dir) {
  const std::filesystem::path base(dir);
  for (const char* name :
       {"schema.json", "vocab.json", "train.jsonl", "test.jsonl", "splits.json"}) {
    if (!std::filesystem::exists(base / name)) {
      throw InputError("corpus directory " + dir + " is missing " + name);
    }
  }
  CorpusBundle st;
  st.schema = AttributeSchema::load((base / "schema.json").string());
  st.schema.validate();
  st.vocab = Vocab::load((base / "vocab.json").string());
  st.corpus.train = load_jsonl((base / "train.jsonl").string(), st.schema);
  st.corpus.test = load_jsonl((base / "test.jsonl").string(), st.schema);
  st.train_enc.reserve(st.corpus.train.size());
  for (const RawExample& ex : st.corpus.train) {
    st.train_enc.push_back(encode_example(ex, st.vocab, st.schema));
  }
  st.test_enc.reserve(st.corpus.test.size());
  for (const RawExample& ex : st.corpus.test) {
    st.test_enc.push_back(encode_example(ex, st.vocab, st.schema));
  }
  load_splits_json((base / "splits.json").string(), st.split_a, st.split_b);
  for (const auto* split : {&st.split_a, &st.split_b}) {
    for (size_t id : *split) {
      if (id >= st.corpus.train.size()) {
        throw InputError("splits.json references example " + std::to_string(id) +
                         " beyond the " + std::to_string(st.corpus.train.size()) +
                         " training examples");
      }
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
auto run_stage(const char* name, std::ostream& log, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  log << "[stage] " << name << "..." << std::endl;
  try {
    auto result = fn();
    const auto dt = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    log << "[stage] " << name << " done in " << dt / 1000.0 << " s" << std::endl;
    return result;
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
}

std::string combo_key(const std::map<int, int>& labels, const AttributeSchema& schema) {
  std::string key;
  for (const auto& [attr, aspect] : labels) {
    if (!key.empty()) key += ',';
    key += schema.attributes[attr].name;
    key += '=';
    key += schema.attributes[attr].aspects[aspect];
  }
  return key;
}

CvaeParams stage_train(const RunConfig& cfg, const CorpusBundle& cs, ArtifactWriter& art) {
  TrainResult tr = train_cvae(cs.schema, cs.vocab, cs.train_enc, cfg.train,
                              [&cfg](const LossRecord& m) {
                                std::fprintf(stderr,
                                             "  epoch %d/%d recon %.4f kl %.4f lc %.4f "
                                             "ld %.4f total %.4f\n",
                                             m.epoch, cfg.train.epochs, m.recon, m.kl,
                                             m.lc, m.ld, m.total);
                              });
  // save_checkpoint is internally atomic; write to the final path directly.
  save_cvae_checkpoint(art.path_for("model/cvae.ckpt"), tr.params, cs.schema, cs.vocab);
  art.record("model/cvae.ckpt");
  save_loss_log_csv(art.temp_path_for("model/loss_log.csv"), tr.log);
  art.promote("model/loss_log.csv");
  return std::move(tr.params);
}

std::string attr_accuracy_json(const AttributeSchema& schema,
                               const std::vector<double>& acc) {
  ordered_json root = ordered_json::object();
  for (size_t i = 0; i < acc.size(); ++i) {
    root[schema.attributes[i].name] = acc[i];
  }
  return root.dump(2);
}

}  // namespace

MetricsReport evaluate_sample_records(const std::vector<SampleRecord>& records,
                                      const std::vector<RawExample>& refs,
                                      const AttributeSchema& schema, const Vocab& vocab,
                                      const std::vector<EvalClassifier>& classifiers,
                                      uint64_t eval_seed, int self_bleu_sample,
                                      const std::string& config_echo) {
  if (records.size() != refs.size()) {
    throw InputError("evaluate_sample_records: " + std::to_string(records.size()) +
                     " records vs " + std::to_string(refs.size()) + " references");
  }
  if (classifiers.size() != schema.num_attributes()) {
    throw SchemaError("evaluate_sample_records: " + std::to_string(classifiers.size()) +
                      " classifiers for " + std::to_string(schema.num_attributes()) +
                      " attributes");
  }
  std::vector<std::vector<int>> resp_ids(records.size());
  std::vector<std::vector<std::string>> resp_tokens(records.size());
  std::vector<std::vector<std::string>> ref_tokens(records.size());
  std::vector<std::map<int, int>> targets(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    resp_tokens[i] = tokenize(records[i].response);
    resp_ids[i].reserve(resp_tokens[i].size());
    for (const std::string& t : resp_tokens[i]) resp_ids[i].push_back(vocab.id(t));
    ref_tokens[i] = tokenize(refs[i].response);
    // Targets: the record's spec when present, the reference labels otherwise
    // (uncontrolled samples are judged against the combination they were
    // paired with).
    const json spec = json::parse(records[i].spec_json);
    if (spec.contains("terms") && !spec["terms"].empty()) {
      for (const auto& term : spec["terms"]) {
        const int attr = schema.attribute_index(term["attribute"].get<std::string>());
        if (attr < 0) {
          throw SchemaError(
              "evaluate_sample_records: unknown attribute in spec of record " +
              std::to_string(i));
        }
        const int aspect = schema.aspect_index(attr, term["aspect"].get<std::string>());
        if (aspect < 0) {
          throw SchemaError(
              "evaluate_sample_records: unknown aspect in spec of record " +
              std::to_string(i));
        }
        targets[i][attr] = aspect;
      }
    } else {
      for (const auto& [a_name, asp_name] : refs[i].labels) {
        const int attr = schema.attribute_index(a_name);
        if (attr < 0) {
          throw SchemaError(
              "evaluate_sample_records: unknown attribute in labels of reference " +
              std::to_string(i));
        }
        const int aspect = schema.aspect_index(attr, asp_name);
        if (aspect < 0) {
          throw SchemaError(
              "evaluate_sample_records: unknown aspect in labels of reference " +
              std::to_string(i));
        }
        targets[i][attr] = aspect;
      }
    }
  }

  const AccuracyResult acc = attribute_accuracy(resp_ids, targets, classifiers);

  // Per-combination accuracy: a response counts as correct for its combo when
  // every targeted attribute is classified as its target aspect.
  std::map<std::string, std::pair<int, int>> combo;  // key -> (correct, total)
  for (size_t i = 0; i < records.size(); ++i) {
    const std::string key = combo_key(targets[i], schema);
    bool all_ok = true;
    for (const auto& [attr, aspect] : targets[i]) {
      if (classifiers[attr].predict(resp_ids[i]) != aspect) {
        all_ok = false;
        break;
      }
    }
    auto& slot = combo[key];
    slot.first += all_ok ? 1 : 0;
    slot.second += 1;
  }

  MetricsReport rep;
  for (size_t a = 0; a < schema.num_attributes(); ++a) {
    rep.attribute_names.push_back(schema.attributes[a].name);
  }
  rep.per_attribute_accuracy = acc.per_attribute;
  rep.per_attribute_n = acc.per_attribute_n;
  rep.average_accuracy = acc.average;
  for (const auto& [key, val] : combo) {
    rep.per_combo_accuracy.emplace_back(
        key, val.second > 0 ? static_cast<double>(val.first) / val.second : 0.0);
  }
  rep.bleu_score = bleu(resp_tokens, ref_tokens);
  for (int n = 1; n <= 3; ++n) {
    const DistinctResult d = distinct_n(resp_tokens, n);
    rep.distinct_sentence.push_back(d.sentence_mean);
    rep.distinct_corpus.push_back(d.corpus);
  }
  SeededRng sb_rng(eval_seed, "self-bleu");
  rep.self_bleu_score = self_bleu(resp_tokens, self_bleu_sample, sb_rng);
  rep.response_count = static_cast<int>(records.size());
  rep.reference_count = static_cast<int>(refs.size());
  rep.config_echo = config_echo;
  return rep;
}

PipelineOutcome run_pipeline(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  ArtifactWriter art(cfg.out_dir);
  PipelineOutcome outcome;

  const CorpusBundle cs = run_stage(
      "gen-corpus", log, [&] { return build_corpus_stage(cfg, art, "corpus/"); });

  const CvaeParams model =
      run_stage("train", log, [&] { return stage_train(cfg, cs, art); });

  const TrainedLatentClassifiers latent = run_stage("train-latent-classifiers", log, [&] {
    TrainedLatentClassifiers tl =
        train_latent_classifiers(model, cs.schema, cs.train_enc, cs.split_a, cfg.latent);
    for (size_t a = 0; a < tl.classifiers.size(); ++a) {
      const std::string rel =
          "classifiers/latent_" + cs.schema.attributes[a].name + ".ckpt";
      save_latent_classifier(art.path_for(rel), tl.classifiers[a], cs.schema);
      art.record(rel);
    }
    art.write_text("classifiers/latent_accuracy.json",
                   attr_accuracy_json(cs.schema, tl.holdout_accuracy));
    return tl;
  });
  outcome.latent_holdout_accuracy = latent.holdout_accuracy;
  for (size_t a = 0; a < latent.holdout_accuracy.size(); ++a) {
    log << "  latent classifier " << cs.schema.attributes[a].name
        << " holdout accuracy " << latent.holdout_accuracy[a] << "\n";
  }

  const TrainedEvalClassifiers evalc = run_stage("train-eval-classifiers", log, [&] {
    TrainedEvalClassifiers te = train_eval_classifiers(cs.schema, cs.vocab, cs.train_enc,
                                                       cs.split_b, cs.split_a, cfg.eval);
    for (size_t a = 0; a < te.classifiers.size(); ++a) {
      const std::string rel = "classifiers/eval_" + cs.schema.attributes[a].name + ".ckpt";
      save_eval_classifier(art.path_for(rel), te.classifiers[a], cs.schema, cs.vocab);
      art.record(rel);
    }
    art.write_text("classifiers/eval_accuracy.json",
                   attr_accuracy_json(cs.schema, te.holdout_accuracy));
    return te;
  });
  outcome.eval_holdout_accuracy = evalc.holdout_accuracy;
  for (size_t a = 0; a < evalc.holdout_accuracy.size(); ++a) {
    log << "  eval classifier " << cs.schema.attributes[a].name << " holdout accuracy "
        << evalc.holdout_accuracy[a] << "\n";
  }

  struct Samples {
    std::vector<SampleRecord> controlled, uncontrolled;
  };
  const Samples samples = run_stage("sample", log, [&] {
    std::vector<const LatentScorer*> scorers;
    for (const LatentClassifier& c : latent.classifiers) scorers.push_back(&c);
    const EnergySpec empty_spec;
    const std::string empty_spec_json = spec_to_json(empty_spec, cs.schema);
    SeededRng base(cfg.sample_seed, "sample");
    Samples s;
    s.controlled.reserve(cs.test_enc.size());
    s.uncontrolled.reserve(cs.test_enc.size());
    for (size_t i = 0; i < cs.test_enc.size(); ++i) {
      const DialogueExample& ex = cs.test_enc[i];
      EnergySpec spec;
      for (const auto& [attr, aspect] : ex.labels) {
        spec.terms.push_back(EnergyTerm{attr, aspect, cfg.lambda_weight});
      }
      SeededRng item_rng = base.substream(static_cast<uint64_t>(i));
      const ControlledSample ctl =
          sample_controlled(model, scorers, spec, ex.context, cfg.solver, item_rng,
                            cfg.train.max_response_len);
      SampleRecord rec;
      rec.context = cs.corpus.test[i].context;
      std::vector<std::string> toks;
      toks.reserve(ctl.response.size());
      for (int id : ctl.response) toks.push_back(cs.vocab.token(id));
      rec.response = detokenize(toks);
      rec.u_start = ctl.u_start;
      rec.u_end = ctl.u_end;
      rec.spec_json = spec_to_json(spec, cs.schema);
      s.controlled.push_back(rec);

      // Same prior draw, no drift: the uncontrolled baseline.
      const std::vector<int> plain = decode_greedy(model, ex.context, ctl.z_start,
                                                   cfg.train.max_response_len);
      SampleRecord urec;
      urec.context = cs.corpus.test[i].context;
      toks.clear();
      for (int id : plain) toks.push_back(cs.vocab.token(id));
      urec.response = detokenize(toks);
      urec.u_start = 0.0;
      urec.u_end = 0.0;
      urec.spec_json = empty_spec_json;
      s.uncontrolled.push_back(std::move(urec));
    }
    save_sample_records(art.temp_path_for("samples/controlled.jsonl"), s.controlled);
    art.promote("samples/controlled.jsonl");
    save_sample_records(art.temp_path_for("samples/uncontrolled.jsonl"), s.uncontrolled);
    art.promote("samples/uncontrolled.jsonl");
    return s;
  });

  run_stage("eval", log, [&] {
    // The echoed config omits out_dir so the report bytes do not depend on
    // where the run happens to live.
    RunConfig echo_cfg = cfg;
    echo_cfg.out_dir.clear();
    const std::string echo = echo_cfg.to_json_string();
    outcome.controlled = evaluate_sample_records(
        samples.controlled, cs.corpus.test, cs.schema, cs.vocab, evalc.classifiers,
        cfg.eval_seed, cfg.self_bleu_sample, echo);
    emit_report(outcome.controlled, art.path_for("report.json"));
    art.record("report.json");
    outcome.uncontrolled = evaluate_sample_records(
        samples.uncontrolled, cs.corpus.test, cs.schema, cs.vocab, evalc.classifiers,
        cfg.eval_seed, cfg.self_bleu_sample, echo);
    emit_report(outcome.uncontrolled, art.path_for("report_uncontrolled.json"));
    art.record("report_uncontrolled.json");
    return 0;
  });
  log << "  controlled mean accuracy " << outcome.controlled.average_accuracy
      << ", uncontrolled " << outcome.uncontrolled.average_accuracy << "\n";

  art.write_manifest(cfg.to_json_string());
  return outcome;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

namespace {

AblationRow row_from_report(const std::string& variant, const MetricsReport& rep) {
  AblationRow row;
  row.variant = variant;
  row.average_accuracy = rep.average_accuracy;
  row.attribute_names = rep.attribute_names;
  row.per_attribute_accuracy = rep.per_attribute_accuracy;
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg,
                                      const std::vector<std::string>& variants,
                                      std::ostream& log) {
  cfg.validate();
  for (const std::string& v : variants) {
    if (v != "full" && v != "no_ebm" && v != "no_lc" && v != "no_ld") {
      throw ValidationError("ablation: unknown variant '" + v +
                            "' (expected full, no_ebm, no_lc, no_ld)");
    }
  }
  if (variants.empty()) {
    throw ValidationError("ablation: no variants requested");
  }

  const bool needs_main =
      std::find(variants.begin(), variants.end(), "full") != variants.end() ||
      std::find(variants.begin(), variants.end(), "no_ebm") != variants.end();
  PipelineOutcome main_outcome;
  if (needs_main) {
    log << "[ablation] building the full system\n";
    main_outcome = run_pipeline(cfg, log);
  }

  std::vector<AblationRow> rows;
  for (const std::string& v : variants) {
    if (v == "full") {
      rows.push_back(row_from_report("full", main_outcome.controlled));
    } else if (v == "no_ebm") {
      rows.push_back(row_from_report("no_ebm", main_outcome.uncontrolled));
    } else {
      RunConfig sub = cfg;
      sub.out_dir = (std::filesystem::path(cfg.out_dir) / "ablation" / v).string();
      if (v == "no_lc") {
        sub.train.w_lc = 0.0;
      } else {
        sub.train.w_ld = 0.0;
      }
      log << "[ablation] retraining variant " << v << "\n";
      const PipelineOutcome sub_outcome = run_pipeline(sub, log);
      rows.push_back(row_from_report(v, sub_outcome.controlled));
    }
  }

  const std::filesystem::path out =
      std::filesystem::path(cfg.out_dir) / "ablation.json";
  std::filesystem::create_directories(out.parent_path());
  const std::string tmp = out.string() + ".partial";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) {
      throw InputError("cannot write ablation report: " + tmp);
    }
    f << ablation_to_json(rows) << "\n";
  }
  std::filesystem::rename(tmp, out);
  return rows;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
  ordered_json arr = ordered_json::array();
  for (const AblationRow& r : rows) {
    ordered_json row;
    row["variant"] = r.variant;
    row["average_accuracy"] = r.average_accuracy;
    ordered_json per = ordered_json::object();
    for (size_t i = 0; i < r.attribute_names.size(); ++i) {
      per[r.attribute_names[i]] = r.per_attribute_accuracy[i];
    }
    row["per_attribute"] = per;
    arr.push_back(row);
  }
  ordered_json root;
  root["version"] = kVersionString;
  root["rows"] = arr;
  return root.dump(2);
}

}  // namespace attrdial
