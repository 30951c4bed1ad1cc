// Conditional VAE over dialogue: mean-pooled bag encoders for the posterior
// p(z|C,r) and prior p(z|C), a single-layer GRU decoder conditioned on z (via
// the initial hidden state and at every input step), per-attribute aspect
// heads, and the combined training loss
//   total = recon + kl_weight * max(KL, threshold) + L_C + L_D
// with the KL taken prior-against-posterior by default (switchable).
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/layers.hpp"
#include "attrdial/rng.hpp"
#include "attrdial/tensor.hpp"

namespace attrdial {

struct CvaeDims {
  int vocab = 0;
  int emb = 32;
  int hidden = 64;
  int latent = 16;
};

struct AffineParams {
  Tensor2 w, b;
};

struct MlpParams {
  AffineParams l1, l2;  // x -> tanh -> affine
};

struct CvaeParams {
  CvaeDims dims;
  std::vector<int> head_sizes;  // aspects per attribute, schema order

  Tensor2 embedding;            // vocab x emb, decoder inputs + context conditioning
  // The bag encoders read their own table. Sharing one table with the decoder
  // stalls training: per-token reconstruction gradients inflate the adaptive
  // optimizer's second moment on exactly the rows whose (1/bag-length scaled)
  // encoder signal must grow, freezing the latent into a constant.
  Tensor2 enc_embedding;        // vocab x emb, posterior/prior bag encoders
  MlpParams post;               // emb -> hidden -> 2*latent
  MlpParams prior;              // emb -> hidden -> 2*latent
  AffineParams latent_to_hidden;  // (latent+emb) -> hidden
  GruParams gru;                // input emb+latent, hidden `hidden`
  AffineParams out_proj;        // hidden -> vocab
  std::vector<AffineParams> heads;  // latent -> n_i

  static CvaeParams init(const CvaeDims& dims, const std::vector<int>& head_sizes,
                         SeededRng& rng);
  void for_each_param(const std::function<void(const std::string&, Tensor2&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor2&)>& fn) const;
  std::map<std::string, Tensor2> snapshot() const;
  void load_from(const std::map<std::string, Tensor2>& tensors);
};

struct LatentGaussian {
  std::vector<double> mu, log_var;
};

// Token bags feeding the pooled encoders: each context turn followed by EOS;
// the posterior bag appends the response tokens and a final EOS.
std::vector<int> context_bag(const DialogueExample& ex);
std::vector<int> posterior_bag(const DialogueExample& ex);

LatentGaussian encode_posterior(const CvaeParams& p, const DialogueExample& ex);
LatentGaussian encode_prior(const CvaeParams& p, const DialogueExample& ex);

std::vector<double> reparameterize(const LatentGaussian& g, SeededRng& rng);

// KL(p || q) for diagonal Gaussians, summed over dimensions.
double kl_diag_gaussian(const LatentGaussian& p, const LatentGaussian& q);

// Piecewise-linear cyclical schedule: ramps 0 -> 1 over the first half of
// each cycle, holds at 1 for the second half.
double kl_weight(long step, int cycle_len);

// Teacher-forced reconstruction loss (mean token NLL including EOS) for one
// example. Optionally returns gradients (parameter grads into *grads, dz into
// *dz). Responses longer than max_len raise InputError.
double decode_teacher_forced(const CvaeParams& p, const DialogueExample& ex,
                             const std::vector<double>& z, int max_len = 24,
                             LayerGrads* grads = nullptr,
                             std::vector<double>* dz = nullptr);

// Greedy argmax decoding from BOS until EOS or max_len tokens.
std::vector<int> decode_greedy(const CvaeParams& p,
                               const std::vector<std::vector<int>>& context,
                               const std::vector<double>& z, int max_len = 24);

// Mean cross-entropy of the labeled aspect heads over a batch (unlabeled
// attributes contribute zero).
double aspect_classification_loss(const CvaeParams& p, const Tensor2& z,
                                  const std::vector<const DialogueExample*>& batch,
                                  LayerGrads* grads = nullptr, Tensor2* dz = nullptr);

// Sum over attribute pairs of the L2 distance between per-attribute latent
// means. groups[i] holds the latent rows of examples labeled with attribute
// i; an empty group raises BatchingError. Pairs whose distance is already
// below `threshold` contribute the threshold itself with zero gradient
// (free-bits hinge, same shape as the KL floor): sub-batch means are noisy
// estimates, so without a floor the pull toward exact coincidence never
// shuts off and keeps perturbing the encoder after alignment is achieved.
double attribute_distance_loss(const std::vector<Tensor2>& groups,
                               std::vector<Tensor2>* dgroups = nullptr,
                               double threshold = 0.0);

enum class KlDirection { kPriorToPosterior, kPosteriorToPrior };

struct TrainConfig {
  int latent_dim = 16;
  int hidden_dim = 64;
  int emb_dim = 32;
  // Stratified batches need batch_size divisible by the attribute count; 66
  // is the default for the three-attribute schema.
  int batch_size = 66;
  int epochs = 20;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int kl_cycle_len = 500;
  double kl_threshold = 0.9;
  double w_recon = 1.0;
  double w_kl = 1.0;
  double w_lc = 1.0;
  double w_ld = 1.0;
  // Epochs trained before the attribute-distance term activates, and epochs
  // over which its weight then ramps linearly to w_ld. The mean-alignment
  // gradient has constant magnitude even when groups nearly coincide, which
  // smothers the initially tiny aspect signal; aligning already-organized
  // latents is stable.
  int ld_warmup_epochs = 2;
  int ld_ramp_epochs = 4;
  // Free-bits floor for each attribute-pair mean distance (see
  // attribute_distance_loss). Roughly the noise level of a sub-batch mean.
  double ld_threshold = 0.5;
  double clip_norm = 5.0;
  int max_response_len = 24;
  KlDirection kl_direction = KlDirection::kPriorToPosterior;
  uint64_t seed = 1;

  void validate(const AttributeSchema& schema) const;  // throws ValidationError
};

struct LossParts {
  double recon = 0, kl = 0, lc = 0, ld = 0, total = 0;
  double kl_hinged = 0;  // batch mean of max(per-example KL, threshold)
  double kl_weight = 0;  // effective multiplier applied to the hinged KL
  double ld_hinged = 0;  // sum of max(pair distance, ld_threshold)
};

// Full training loss on a batch with injected reparameterization noise
// (batch x latent). Deterministic given inputs; when grads is non-null the
// map is densely populated for every parameter.
LossParts cvae_loss(const CvaeParams& p, const std::vector<const DialogueExample*>& batch,
                    const Tensor2& noise, double kl_w, const TrainConfig& cfg,
                    LayerGrads* grads);

struct LossRecord {
  int epoch = 0;
  long step = 0;
  double recon = 0, kl = 0, kl_weight = 0, lc = 0, ld = 0, total = 0;
};

struct TrainResult {
  CvaeParams params;
  std::vector<LossRecord> log;          // one record per optimization step
  std::vector<LossRecord> epoch_means;  // per-epoch means (step = last step)
};

// Columns: epoch,step,recon,kl,kl_weight,lc,ld,total
void save_loss_log_csv(const std::string& path, const std::vector<LossRecord>& log);

// Invoked with each epoch's mean losses as training progresses.
using EpochCallback = std::function<void(const LossRecord&)>;

TrainResult train_cvae(const AttributeSchema& schema, const Vocab& vocab,
                       const std::vector<DialogueExample>& train_data,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Deterministic stratified batches: every batch holds exactly
// batch_size / num_attributes examples of each attribute.
std::vector<std::vector<int>> stratified_batches(
    const std::vector<DialogueExample>& data, const AttributeSchema& schema,
    int batch_size, SeededRng& rng);

// --------------------------------------------------------------------------
// Checkpoint container: one JSON document (17-significant-digit floats,
// sorted tensor names) plus a trailing "crc32 <hex>" line over the preceding
// bytes. Loading verifies the checksum and format_version.
// --------------------------------------------------------------------------

constexpr int kFormatVersion = 1;

struct Checkpoint {
  std::string meta_json;  // canonical serialized meta object
  std::map<std::string, Tensor2> tensors;
};

void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::map<std::string, Tensor2>& tensors);
Checkpoint load_checkpoint(const std::string& path);

void save_cvae_checkpoint(const std::string& path, const CvaeParams& params,
                          const AttributeSchema& schema, const Vocab& vocab);

struct LoadedCvae {
  CvaeParams params;
  AttributeSchema schema;
  Vocab vocab;
};
// expected_schema_hash, when non-empty, must match the stored hash
// (VersionError otherwise).
LoadedCvae load_cvae_checkpoint(const std::string& path,
                                const std::string& expected_schema_hash = "");

}  // namespace attrdial
