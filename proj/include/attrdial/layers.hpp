// Hand-written layer forwards/backwards plus the optimizer and the
// finite-difference gradient checker. Everything operates on Tensor2 and
// is validated against central differences in the test suite.
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "attrdial/rng.hpp"
#include "attrdial/tensor.hpp"

namespace attrdial {

// Named gradient accumulator. Missing entries mean zero gradient.
using LayerGrads = std::map<std::string, Tensor2>;

// grads[name] += g, creating a zero tensor on first touch.
void grads_accum(LayerGrads& grads, const std::string& name, const Tensor2& g);
Tensor2& grads_slot(LayerGrads& grads, const std::string& name, int rows, int cols);

// y = x.w + b; x is batch x in, w is in x out, b is 1 x out.
Tensor2 affine_forward(const Tensor2& x, const Tensor2& w, const Tensor2& b);

struct AffineBack {
  Tensor2 dx, dw, db;
};
AffineBack affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& upstream);

// Gated recurrent unit, one step. Gate convention:
//   u = sigmoid(x.wu + h.uu + bu)        (update gate)
//   r = sigmoid(x.wr + h.ur + br)        (reset gate)
//   n = tanh(x.wn + r * (h.un) + bn)     (candidate)
//   h' = (1 - u) * n + u * h
// With all-zero parameters both gates sit at 0.5 and n = 0, so h' = 0.5 h.
struct GruParams {
  Tensor2 wu, uu, bu;
  Tensor2 wr, ur, br;
  Tensor2 wn, un, bn;

  static GruParams zeros(int input_dim, int hidden_dim);
  int input_dim() const { return wu.rows; }
  int hidden_dim() const { return wu.cols; }
};

// Intermediates needed by the backward pass.
struct GruCache {
  Tensor2 x, h_prev;
  Tensor2 u, r, n, hu;  // gate values, candidate, h.un
};

Tensor2 gru_step(const GruParams& p, const Tensor2& x, const Tensor2& h_prev,
                 GruCache* cache = nullptr);

struct GruGrads {
  Tensor2 wu, uu, bu, wr, ur, br, wn, un, bn;
  static GruGrads zeros_like(const GruParams& p);
};

struct GruBack {
  Tensor2 dx, dh_prev;
};
// Accumulates parameter gradients into `acc`; returns input/state gradients.
GruBack gru_backward(const GruParams& p, const GruCache& cache,
                     const Tensor2& dh_next, GruGrads& acc);

// Elementwise activations (out-of-place) and their derivative helpers.
Tensor2 tanh_forward(const Tensor2& x);
Tensor2 sigmoid_forward(const Tensor2& x);

// Mean of embedding rows for each bag of token ids. emb is vocab x dim.
Tensor2 embedding_bag_mean(const Tensor2& emb, const std::vector<std::vector<int>>& bags);
// Scatter the pooled gradient back into the embedding table.
void embedding_bag_mean_backward(const Tensor2& dpooled,
                                 const std::vector<std::vector<int>>& bags,
                                 Tensor2& demb);

// Softmax cross-entropy over rows of `logits` against integer targets.
// Rows with target < 0 are ignored. `row_weight[i]` scales row i's
// contribution to both the loss and dlogits. Returns the weighted loss sum;
// writes probabilities into *probs when non-null (reused by backward).
double softmax_cross_entropy(const Tensor2& logits, const std::vector<int>& targets,
                             const std::vector<double>& row_weight,
                             Tensor2* dlogits, Tensor2* probs = nullptr);

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_uniform_fan_in(Tensor2& w, int fan_in, SeededRng& rng);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_global_norm(LayerGrads& grads, double max_norm);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay: the decay multiplies the parameter
// before the adaptive step, so decay never passes through the moment
// estimates. Moments are kept per parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void begin_step() { ++step_; }
  int step_index() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // Applies one update to `param` using `grad`. Throws
  // TrainingDivergenceError naming the parameter if the gradient is
  // non-finite. begin_step() must have been called at least once.
  void update(const std::string& name, Tensor2& param, const Tensor2& grad);

 private:
  struct Slot {
    Tensor2 m, v;
  };
  AdamWConfig cfg_;
  int step_ = 0;
  std::map<std::string, Slot> slots_;
};

// Central-difference gradient check.
// `loss_and_grads` evaluates the loss and its analytic gradients at the given
// parameter values (parameters the function does not use may be absent from
// the returned map). Checks up to `max_coords_per_tensor` coordinates per
// tensor (0 = all), sampled deterministically from `rng`.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

GradCheckResult grad_check(
    std::map<std::string, Tensor2> params,
    const std::function<double(const std::map<std::string, Tensor2>&, LayerGrads*)>& loss_and_grads,
    double epsilon, SeededRng& rng, int max_coords_per_tensor = 0);

}  // namespace attrdial
