#include "attrdial/latent_space.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "attrdial/error.hpp"

namespace attrdial {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_latent_dim(const LatentScorer& s, const std::vector<double>& z) {
  if (static_cast<int>(z.size()) != s.latent_dim()) {
    throw DimensionError("latent scorer expects " + std::to_string(s.latent_dim()) +
                         " dims, got " + std::to_string(z.size()));
  }
}

void check_aspect(const LatentScorer& s, int aspect) {
  if (aspect < 0 || aspect >= s.num_aspects()) {
    throw InputError("aspect index " + std::to_string(aspect) + " outside [0, " +
                     std::to_string(s.num_aspects()) + ")");
  }
}

}  // namespace

std::vector<double> LatentClassifier::logits(const std::vector<double>& z) const {
  check_latent_dim(*this, z);
  Tensor2 zt = Tensor2::row_vector(z);
  Tensor2 h = affine_forward(zt, l1.w, l1.b);
  for (double& v : h.data) v = std::tanh(v);
  Tensor2 out = affine_forward(h, l2.w, l2.b);
  return std::vector<double>(out.data.begin(), out.data.end());
}

std::vector<double> LatentClassifier::logit_grad(const std::vector<double>& z,
                                                 int aspect) const {
  check_latent_dim(*this, z);
  check_aspect(*this, aspect);
  Tensor2 zt = Tensor2::row_vector(z);
  Tensor2 h = affine_forward(zt, l1.w, l1.b);
  for (double& v : h.data) v = std::tanh(v);
  // d logit_j / dz_d = sum_k w1[d,k] * (1 - h_k^2) * w2[k,j]
  const int hid = l1.w.cols;
  std::vector<double> gate(hid);
  for (int k = 0; k < hid; ++k) {
    gate[k] = (1.0 - h.data[k] * h.data[k]) * l2.w.at(k, aspect);
  }
  std::vector<double> grad(z.size(), 0.0);
  for (size_t d = 0; d < z.size(); ++d) {
    double acc = 0.0;
    const double* wrow = l1.w.row(static_cast<int>(d));
    for (int k = 0; k < hid; ++k) acc += wrow[k] * gate[k];
    grad[d] = acc;
  }
  return grad;
}

LinearScorer::LinearScorer(Tensor2 weights, std::vector<double> bias)
    : w(std::move(weights)), b(std::move(bias)) {
  if (b.empty()) b.assign(static_cast<size_t>(w.cols), 0.0);
  if (static_cast<int>(b.size()) != w.cols) {
    throw DimensionError("LinearScorer: bias has " + std::to_string(b.size()) +
                         " entries for " + std::to_string(w.cols) + " aspects");
  }
}

std::vector<double> LinearScorer::logits(const std::vector<double>& z) const {
  check_latent_dim(*this, z);
  std::vector<double> out(b);
  for (int d = 0; d < w.rows; ++d) {
    const double* wrow = w.row(d);
    for (int j = 0; j < w.cols; ++j) out[j] += z[d] * wrow[j];
  }
  return out;
}

std::vector<double> LinearScorer::logit_grad(const std::vector<double>& z,
                                             int aspect) const {
  check_latent_dim(*this, z);
  check_aspect(*this, aspect);
  std::vector<double> grad(w.rows);
  for (int d = 0; d < w.rows; ++d) grad[d] = w.at(d, aspect);
  return grad;
}

void LatentClassifierConfig::validate() const {
  auto fail = [](const std::string& m) {
    throw ValidationError("latent classifier config: " + m);
  };
  if (hidden_dim < 1) fail("hidden_dim must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (!(holdout_frac > 0.0) || holdout_frac >= 1.0) fail("holdout_frac must be in (0, 1)");
}

LatentFitResult fit_latent_classifier(const Tensor2& latents, const std::vector<int>& labels,
                                      int n_aspects, const LatentClassifierConfig& cfg,
                                      SeededRng& rng) {
  cfg.validate();
  if (latents.rows != static_cast<int>(labels.size())) {
    throw DimensionError("fit_latent_classifier: " + std::to_string(latents.rows) +
                         " latents vs " + std::to_string(labels.size()) + " labels");
  }
  if (n_aspects < 2) {
    throw InputError("fit_latent_classifier: need at least 2 aspects");
  }
  std::vector<char> seen(n_aspects, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_aspects) {
      throw InputError("fit_latent_classifier: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(n_aspects) + ")");
    }
    seen[labels[i]] = 1;
  }
  if (std::count(seen.begin(), seen.end(), 1) < 2) {
    throw BatchingError("fit_latent_classifier: fewer than 2 aspects represented");
  }

  std::vector<int> order(latents.rows);
  for (int i = 0; i < latents.rows; ++i) order[i] = i;
  SeededRng split_rng = rng.substream("split");
  split_rng.shuffle(order);
  const int holdout = std::max(1, static_cast<int>(latents.rows * cfg.holdout_frac));
  const int train_n = latents.rows - holdout;
  if (train_n < 1) {
    throw BatchingError("fit_latent_classifier: no training rows after holdout");
  }

  const int latent_dim = latents.cols;
  LatentClassifier c;
  SeededRng init_rng = rng.substream("init");
  c.l1.w = Tensor2(latent_dim, cfg.hidden_dim);
  c.l1.b = Tensor2(1, cfg.hidden_dim);
  c.l2.w = Tensor2(cfg.hidden_dim, n_aspects);
  c.l2.b = Tensor2(1, n_aspects);
  init_uniform_fan_in(c.l1.w, latent_dim, init_rng);
  init_uniform_fan_in(c.l2.w, cfg.hidden_dim, init_rng);

  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  SeededRng epoch_rng = rng.substream("epochs");
  std::vector<int> train_rows(order.begin(), order.begin() + train_n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SeededRng shuffle_rng = epoch_rng.substream(static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(train_rows);
    for (int start = 0; start < train_n; start += cfg.batch_size) {
      const int b_sz = std::min(cfg.batch_size, train_n - start);
      Tensor2 x(b_sz, latent_dim);
      std::vector<int> y(b_sz);
      for (int i = 0; i < b_sz; ++i) {
        const int row = train_rows[start + i];
        std::copy(latents.row(row), latents.row(row) + latent_dim, x.row(i));
        y[i] = labels[row];
      }
      Tensor2 h_pre = affine_forward(x, c.l1.w, c.l1.b);
      Tensor2 h = tanh_forward(h_pre);
      Tensor2 logits = affine_forward(h, c.l2.w, c.l2.b);
      const std::vector<double> row_w(b_sz, 1.0 / b_sz);
      Tensor2 dlogits;
      softmax_cross_entropy(logits, y, row_w, &dlogits);
      AffineBack b2 = affine_backward(h, c.l2.w, dlogits);
      Tensor2& dh = b2.dx;
      for (size_t i = 0; i < dh.size(); ++i) dh.data[i] *= 1.0 - h.data[i] * h.data[i];
      AffineBack b1 = affine_backward(x, c.l1.w, dh);
      opt.begin_step();
      opt.update("l1.w", c.l1.w, b1.dw);
      opt.update("l1.b", c.l1.b, b1.db);
      opt.update("l2.w", c.l2.w, b2.dw);
      opt.update("l2.b", c.l2.b, b2.db);
    }
  }

  LatentFitResult res;
  res.train_count = train_n;
  res.holdout_count = holdout;
  int correct = 0;
  std::vector<double> z(latent_dim);
  for (int i = train_n; i < latents.rows; ++i) {
    const int row = order[i];
    z.assign(latents.row(row), latents.row(row) + latent_dim);
    const std::vector<double> lg = c.logits(z);
    const int pred =
        static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
    correct += pred == labels[row] ? 1 : 0;
  }
  res.holdout_accuracy = static_cast<double>(correct) / holdout;
  res.classifier = std::move(c);
  return res;
}

std::vector<double> frozen_latent(const CvaeParams& cvae, const DialogueExample& ex,
                                  bool use_prior_encoder, SeededRng& rng) {
  const LatentGaussian g =
      use_prior_encoder ? encode_prior(cvae, ex) : encode_posterior(cvae, ex);
  return reparameterize(g, rng);
}

TrainedLatentClassifiers train_latent_classifiers(
    const CvaeParams& cvae, const AttributeSchema& schema,
    const std::vector<DialogueExample>& examples, const std::vector<size_t>& example_ids,
    const LatentClassifierConfig& cfg) {
  cfg.validate();
  const int n_attr = static_cast<int>(schema.num_attributes());
  const int latent_dim = cvae.dims.latent;

  // Collect per-attribute latents.
  std::vector<std::vector<std::vector<double>>> zs(n_attr);
  std::vector<std::vector<int>> ys(n_attr);
  SeededRng base(cfg.seed, "latent-classifiers");
  for (size_t id : example_ids) {
    if (id >= examples.size()) {
      throw InputError("train_latent_classifiers: example id " + std::to_string(id) +
                       " outside corpus of " + std::to_string(examples.size()));
    }
    const DialogueExample& ex = examples[id];
    if (ex.labels.size() != 1) {
      throw BatchingError("train_latent_classifiers: example " + std::to_string(id) +
                          " must carry exactly one label");
    }
    const auto [attr, aspect] = *ex.labels.begin();
    if (attr < 0 || attr >= n_attr) {
      throw SchemaError("train_latent_classifiers: attribute index " +
                        std::to_string(attr) + " outside schema");
    }
    SeededRng ex_rng = base.substream(static_cast<uint64_t>(id));
    zs[attr].push_back(frozen_latent(cvae, ex, cfg.use_prior_encoder, ex_rng));
    ys[attr].push_back(aspect);
  }

  TrainedLatentClassifiers out;
  out.example_ids = example_ids;
  for (int a = 0; a < n_attr; ++a) {
    const int n_aspects = static_cast<int>(schema.attributes[a].aspects.size());
    if (zs[a].empty()) {
      throw BatchingError("train_latent_classifiers: no examples labeled with attribute " +
                          schema.attributes[a].name);
    }
    Tensor2 latents(static_cast<int>(zs[a].size()), latent_dim);
    for (size_t r = 0; r < zs[a].size(); ++r) {
      std::copy(zs[a][r].begin(), zs[a][r].end(), latents.row(static_cast<int>(r)));
    }
    SeededRng fit_rng = base.substream("fit-" + schema.attributes[a].name);
    LatentFitResult res = fit_latent_classifier(latents, ys[a], n_aspects, cfg, fit_rng);
    res.classifier.attribute = a;
    out.classifiers.push_back(std::move(res.classifier));
    out.holdout_accuracy.push_back(res.holdout_accuracy);
  }
  return out;
}

void save_latent_classifier(const std::string& path, const LatentClassifier& c,
                            const AttributeSchema& schema) {
  if (c.attribute < 0 || c.attribute >= static_cast<int>(schema.num_attributes())) {
    throw InputError("save_latent_classifier: attribute index outside schema");
  }
  ordered_json meta;
  meta["kind"] = "latent-classifier";
  meta["attribute"] = c.attribute;
  meta["attribute_name"] = schema.attributes[c.attribute].name;
  meta["aspects"] = schema.attributes[c.attribute].aspects;
  meta["schema_hash"] = schema.hash_hex();
  meta["latent_dim"] = c.latent_dim();
  meta["hidden_dim"] = c.l1.w.cols;
  std::map<std::string, Tensor2> tensors;
  tensors["l1.w"] = c.l1.w;
  tensors["l1.b"] = c.l1.b;
  tensors["l2.w"] = c.l2.w;
  tensors["l2.b"] = c.l2.b;
  save_checkpoint(path, meta.dump(), tensors);
}

LatentClassifier load_latent_classifier(const std::string& path,
                                        const std::string& expected_schema_hash) {
  Checkpoint ck = load_checkpoint(path);
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  if (!meta.contains("kind") || meta["kind"] != "latent-classifier") {
    throw VersionError("checkpoint " + path + " is not a latent-classifier checkpoint");
  }
  if (!expected_schema_hash.empty() &&
      meta["schema_hash"].get<std::string>() != expected_schema_hash) {
    throw VersionError("latent classifier " + path + " was built for schema " +
                       meta["schema_hash"].get<std::string>() + ", expected " +
                       expected_schema_hash);
  }
  LatentClassifier c;
  c.attribute = meta["attribute"].get<int>();
  auto grab = [&ck, &path](const char* name) -> Tensor2 {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      throw IntegrityError("latent classifier " + path + " is missing tensor " + name);
    }
    return it->second;
  };
  c.l1.w = grab("l1.w");
  c.l1.b = grab("l1.b");
  c.l2.w = grab("l2.w");
  c.l2.b = grab("l2.b");
  if (c.l1.w.cols != c.l1.b.cols || c.l1.w.cols != c.l2.w.rows ||
      c.l2.w.cols != c.l2.b.cols) {
    throw IntegrityError("latent classifier " + path + " has inconsistent tensor shapes");
  }
  return c;
}

}  // namespace attrdial
