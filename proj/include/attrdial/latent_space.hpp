// Post-hoc attribute classifiers over the frozen latent space: a small tanh
// MLP per attribute, trained on posterior latents of labeled examples, with
// analytic input gradients. The sampler consumes these through the
// LatentScorer interface so analytic (linear) scorers can stand in during
// testing.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/cvae.hpp"
#include "attrdial/layers.hpp"
#include "attrdial/rng.hpp"
#include "attrdial/tensor.hpp"

namespace attrdial {

// Anything that scores a latent vector into per-aspect logits and exposes the
// gradient of a chosen logit with respect to the latent.
class LatentScorer {
 public:
  virtual ~LatentScorer() = default;
  virtual int num_aspects() const = 0;
  virtual int latent_dim() const = 0;
  virtual std::vector<double> logits(const std::vector<double>& z) const = 0;
  // d logits[aspect] / dz, analytic.
  virtual std::vector<double> logit_grad(const std::vector<double>& z, int aspect) const = 0;
};

// f(z) = tanh(z.w1 + b1).w2 + b2
class LatentClassifier : public LatentScorer {
 public:
  int attribute = 0;
  AffineParams l1;  // latent x hidden
  AffineParams l2;  // hidden x n_aspects

  int num_aspects() const override { return l2.w.cols; }
  int latent_dim() const override { return l1.w.rows; }
  std::vector<double> logits(const std::vector<double>& z) const override;
  std::vector<double> logit_grad(const std::vector<double>& z, int aspect) const override;
};

// Linear logits f(z) = z.w + b; gradient of logit j is w[:, j] everywhere.
class LinearScorer : public LatentScorer {
 public:
  Tensor2 w;  // latent x n_aspects
  std::vector<double> b;

  LinearScorer() = default;
  LinearScorer(Tensor2 weights, std::vector<double> bias);

  int num_aspects() const override { return w.cols; }
  int latent_dim() const override { return w.rows; }
  std::vector<double> logits(const std::vector<double>& z) const override;
  std::vector<double> logit_grad(const std::vector<double>& z, int aspect) const override;
};

struct LatentClassifierConfig {
  int hidden_dim = 32;
  int epochs = 25;
  int batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double holdout_frac = 0.2;
  // When true, latents come from the prior encoder (context only) instead of
  // the posterior encoder over (context, response).
  bool use_prior_encoder = false;
  uint64_t seed = 1;

  void validate() const;  // throws ValidationError
};

// Generic trainer: rows of `latents` with labels in [0, n_aspects). A
// deterministic holdout of holdout_frac is split off before training;
// returns the trained classifier and its holdout accuracy.
struct LatentFitResult {
  LatentClassifier classifier;
  double holdout_accuracy = 0.0;
  int train_count = 0;
  int holdout_count = 0;
};
LatentFitResult fit_latent_classifier(const Tensor2& latents, const std::vector<int>& labels,
                                      int n_aspects, const LatentClassifierConfig& cfg,
                                      SeededRng& rng);

// Posterior (or prior, per config) mean+noise latent for one example under
// the frozen model, using the supplied rng for the reparameterization draw.
std::vector<double> frozen_latent(const CvaeParams& cvae, const DialogueExample& ex,
                                  bool use_prior_encoder, SeededRng& rng);

struct TrainedLatentClassifiers {
  std::vector<LatentClassifier> classifiers;  // schema order
  std::vector<double> holdout_accuracy;       // per attribute
  std::vector<size_t> example_ids;            // corpus indices consumed (split A)
};

// Trains one classifier per schema attribute on the latents of the examples
// whose single label names that attribute, restricted to `example_ids`.
// An attribute with fewer than 2 represented aspects raises BatchingError.
TrainedLatentClassifiers train_latent_classifiers(
    const CvaeParams& cvae, const AttributeSchema& schema,
    const std::vector<DialogueExample>& examples, const std::vector<size_t>& example_ids,
    const LatentClassifierConfig& cfg);

// Checkpoint I/O (same container format as the model checkpoints; one file
// per attribute, kind "latent-classifier").
void save_latent_classifier(const std::string& path, const LatentClassifier& c,
                            const AttributeSchema& schema);
LatentClassifier load_latent_classifier(const std::string& path,
                                        const std::string& expected_schema_hash = "");

}  // namespace attrdial
