#include "attrdial/layers.hpp"

#include <algorithm>
#include <cmath>

#include "attrdial/error.hpp"

namespace attrdial {

void grads_accum(LayerGrads& grads, const std::string& name, const Tensor2& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, g);
  } else {
    add_inplace(it->second, g);
  }
}

Tensor2& grads_slot(LayerGrads& grads, const std::string& name, int rows, int cols) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    it = grads.emplace(name, Tensor2(rows, cols)).first;
  } else if (it->second.rows != rows || it->second.cols != cols) {
    throw DimensionError("grads_slot: existing gradient for " + name + " is " +
                         it->second.shape_str() + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  return it->second;
}

Tensor2 affine_forward(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols != w.rows) {
    throw DimensionError("affine_forward: input " + x.shape_str() +
                         " does not match weight " + w.shape_str());
  }
  Tensor2 y;
  matmul_into(x, w, y);
  add_row_vector_inplace(y, b);
  return y;
}

AffineBack affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& upstream) {
  if (upstream.rows != x.rows || upstream.cols != w.cols) {
    throw DimensionError("affine_backward: upstream " + upstream.shape_str() +
                         " does not match x " + x.shape_str() + " and w " +
                         w.shape_str());
  }
  AffineBack out;
  matmul_at_b_into(x, upstream, out.dw);       // dw = x^T . upstream
  out.db = column_sums(upstream);              // db = 1^T . upstream
  matmul_a_bt_into(upstream, w, out.dx);       // dx = upstream . w^T
  return out;
}

GruParams GruParams::zeros(int input_dim, int hidden_dim) {
  GruParams p;
  p.wu = Tensor2(input_dim, hidden_dim);
  p.uu = Tensor2(hidden_dim, hidden_dim);
  p.bu = Tensor2(1, hidden_dim);
  p.wr = Tensor2(input_dim, hidden_dim);
  p.ur = Tensor2(hidden_dim, hidden_dim);
  p.br = Tensor2(1, hidden_dim);
  p.wn = Tensor2(input_dim, hidden_dim);
  p.un = Tensor2(hidden_dim, hidden_dim);
  p.bn = Tensor2(1, hidden_dim);
  return p;
}

GruGrads GruGrads::zeros_like(const GruParams& p) {
  GruGrads g;
  g.wu = Tensor2(p.wu.rows, p.wu.cols);
  g.uu = Tensor2(p.uu.rows, p.uu.cols);
  g.bu = Tensor2(1, p.bu.cols);
  g.wr = Tensor2(p.wr.rows, p.wr.cols);
  g.ur = Tensor2(p.ur.rows, p.ur.cols);
  g.br = Tensor2(1, p.br.cols);
  g.wn = Tensor2(p.wn.rows, p.wn.cols);
  g.un = Tensor2(p.un.rows, p.un.cols);
  g.bn = Tensor2(1, p.bn.cols);
  return g;
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor2 gru_step(const GruParams& p, const Tensor2& x, const Tensor2& h_prev,
                 GruCache* cache) {
  if (x.cols != p.wu.rows) {
    throw DimensionError("gru_step: input " + x.shape_str() +
                         " does not match wu " + p.wu.shape_str());
  }
  if (h_prev.cols != p.uu.rows || h_prev.rows != x.rows) {
    throw DimensionError("gru_step: state " + h_prev.shape_str() +
                         " does not match input " + x.shape_str() + " and uu " +
                         p.uu.shape_str());
  }
  Tensor2 au;
  matmul_into(x, p.wu, au);
  matmul_into(h_prev, p.uu, au, /*accumulate=*/true);
  add_row_vector_inplace(au, p.bu);

  Tensor2 ar;
  matmul_into(x, p.wr, ar);
  matmul_into(h_prev, p.ur, ar, /*accumulate=*/true);
  add_row_vector_inplace(ar, p.br);

  Tensor2 hu;
  matmul_into(h_prev, p.un, hu);

  for (double& v : au.data) v = sigmoid(v);
  for (double& v : ar.data) v = sigmoid(v);

  Tensor2 an;
  matmul_into(x, p.wn, an);
  for (size_t i = 0; i < an.size(); ++i) an.data[i] += ar.data[i] * hu.data[i];
  add_row_vector_inplace(an, p.bn);
  for (double& v : an.data) v = std::tanh(v);

  Tensor2 h_next(x.rows, p.hidden_dim());
  for (size_t i = 0; i < h_next.size(); ++i) {
    h_next.data[i] = (1.0 - au.data[i]) * an.data[i] + au.data[i] * h_prev.data[i];
  }

  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->u = std::move(au);
    cache->r = std::move(ar);
    cache->n = std::move(an);
    cache->hu = std::move(hu);
  }
  return h_next;
}

GruBack gru_backward(const GruParams& p, const GruCache& c,
                     const Tensor2& dh_next, GruGrads& acc) {
  require_same_shape(dh_next, c.u, "gru_backward");
  const size_t n = dh_next.size();

  Tensor2 du(dh_next.rows, dh_next.cols);
  Tensor2 dn(dh_next.rows, dh_next.cols);
  Tensor2 dh_prev(dh_next.rows, dh_next.cols);
  for (size_t i = 0; i < n; ++i) {
    const double g = dh_next.data[i];
    du.data[i] = g * (c.h_prev.data[i] - c.n.data[i]);
    dn.data[i] = g * (1.0 - c.u.data[i]);
    dh_prev.data[i] = g * c.u.data[i];
  }

  // Candidate path: n = tanh(a_n), a_n = x.wn + r*hu + bn.
  Tensor2 dan = dn;
  for (size_t i = 0; i < n; ++i) dan.data[i] *= 1.0 - c.n.data[i] * c.n.data[i];

  Tensor2 dr(dh_next.rows, dh_next.cols);
  Tensor2 dhu(dh_next.rows, dh_next.cols);
  for (size_t i = 0; i < n; ++i) {
    dr.data[i] = dan.data[i] * c.hu.data[i];
    dhu.data[i] = dan.data[i] * c.r.data[i];
  }

  matmul_at_b_into(c.x, dan, acc.wn, /*accumulate=*/true);
  add_inplace(acc.bn, column_sums(dan));
  Tensor2 dx;
  matmul_a_bt_into(dan, p.wn, dx);
  matmul_at_b_into(c.h_prev, dhu, acc.un, /*accumulate=*/true);
  matmul_a_bt_into(dhu, p.un, dh_prev, /*accumulate=*/true);

  // Update gate: u = sigmoid(a_u).
  Tensor2 dau = du;
  for (size_t i = 0; i < n; ++i) dau.data[i] *= c.u.data[i] * (1.0 - c.u.data[i]);
  matmul_at_b_into(c.x, dau, acc.wu, /*accumulate=*/true);
  add_inplace(acc.bu, column_sums(dau));
  matmul_a_bt_into(dau, p.wu, dx, /*accumulate=*/true);
  matmul_at_b_into(c.h_prev, dau, acc.uu, /*accumulate=*/true);
  matmul_a_bt_into(dau, p.uu, dh_prev, /*accumulate=*/true);

  // Reset gate: r = sigmoid(a_r).
  Tensor2 dar = dr;
  for (size_t i = 0; i < n; ++i) dar.data[i] *= c.r.data[i] * (1.0 - c.r.data[i]);
  matmul_at_b_into(c.x, dar, acc.wr, /*accumulate=*/true);
  add_inplace(acc.br, column_sums(dar));
  matmul_a_bt_into(dar, p.wr, dx, /*accumulate=*/true);
  matmul_at_b_into(c.h_prev, dar, acc.ur, /*accumulate=*/true);
  matmul_a_bt_into(dar, p.ur, dh_prev, /*accumulate=*/true);

  return GruBack{std::move(dx), std::move(dh_prev)};
}

Tensor2 tanh_forward(const Tensor2& x) {
  Tensor2 y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

Tensor2 sigmoid_forward(const Tensor2& x) {
  Tensor2 y = x;
  for (double& v : y.data) v = sigmoid(v);
  return y;
}

Tensor2 embedding_bag_mean(const Tensor2& emb, const std::vector<std::vector<int>>& bags) {
  Tensor2 out(static_cast<int>(bags.size()), emb.cols);
  for (size_t b = 0; b < bags.size(); ++b) {
    const auto& bag = bags[b];
    if (bag.empty()) {
      throw InputError("embedding_bag_mean: empty token bag at row " + std::to_string(b));
    }
    double* orow = out.row(static_cast<int>(b));
    for (int id : bag) {
      if (id < 0 || id >= emb.rows) {
        throw InputError("embedding_bag_mean: token id " + std::to_string(id) +
                         " outside vocab of " + std::to_string(emb.rows));
      }
      const double* erow = emb.row(id);
      for (int j = 0; j < emb.cols; ++j) orow[j] += erow[j];
    }
    const double inv = 1.0 / static_cast<double>(bag.size());
    for (int j = 0; j < emb.cols; ++j) orow[j] *= inv;
  }
  return out;
}

void embedding_bag_mean_backward(const Tensor2& dpooled,
                                 const std::vector<std::vector<int>>& bags,
                                 Tensor2& demb) {
  if (dpooled.rows != static_cast<int>(bags.size())) {
    throw DimensionError("embedding_bag_mean_backward: upstream rows " +
                         dpooled.shape_str() + " vs " +
                         std::to_string(bags.size()) + " bags");
  }
  for (size_t b = 0; b < bags.size(); ++b) {
    const auto& bag = bags[b];
    const double inv = 1.0 / static_cast<double>(bag.size());
    const double* grow = dpooled.row(static_cast<int>(b));
    for (int id : bag) {
      double* erow = demb.row(id);
      for (int j = 0; j < dpooled.cols; ++j) erow[j] += grow[j] * inv;
    }
  }
}

double softmax_cross_entropy(const Tensor2& logits, const std::vector<int>& targets,
                             const std::vector<double>& row_weight,
                             Tensor2* dlogits, Tensor2* probs) {
  if (static_cast<int>(targets.size()) != logits.rows ||
      static_cast<int>(row_weight.size()) != logits.rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(row_weight.size()) +
                         " weights for logits " + logits.shape_str());
  }
  const int v = logits.cols;
  double loss = 0.0;
  if (dlogits != nullptr && (dlogits->rows != logits.rows || dlogits->cols != v)) {
    *dlogits = Tensor2(logits.rows, v);
  }
  if (probs != nullptr && (probs->rows != logits.rows || probs->cols != v)) {
    *probs = Tensor2(logits.rows, v);
  }
  std::vector<double> p(v);
  for (int i = 0; i < logits.rows; ++i) {
    const int t = targets[i];
    if (t < 0) {
      if (dlogits != nullptr) {
        std::fill(dlogits->row(i), dlogits->row(i) + v, 0.0);
      }
      continue;
    }
    if (t >= v) {
      throw InputError("softmax_cross_entropy: target " + std::to_string(t) +
                       " outside " + std::to_string(v) + " classes");
    }
    const double* lrow = logits.row(i);
    double mx = lrow[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, lrow[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(lrow[j] - mx);
      z += p[j];
    }
    const double invz = 1.0 / z;
    for (int j = 0; j < v; ++j) p[j] *= invz;
    const double w = row_weight[i];
    loss += -w * (std::log(p[t]) );
    if (probs != nullptr) {
      std::copy(p.begin(), p.end(), probs->row(i));
    }
    if (dlogits != nullptr) {
      double* drow = dlogits->row(i);
      for (int j = 0; j < v; ++j) drow[j] = w * p[j];
      drow[t] -= w;
    }
  }
  return loss;
}

void init_uniform_fan_in(Tensor2& w, int fan_in, SeededRng& rng) {
  if (fan_in <= 0) {
    throw InputError("init_uniform_fan_in: fan_in must be positive");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.data) v = rng.next_uniform(-bound, bound);
}

double clip_global_norm(LayerGrads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += frob_norm_sq(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) scale_inplace(g, s);
  }
  return norm;
}

void AdamW::update(const std::string& name, Tensor2& param, const Tensor2& grad) {
  if (step_ <= 0) {
    throw InputError("AdamW::update called before begin_step");
  }
  require_same_shape(param, grad, "AdamW::update");
  if (!all_finite(grad)) {
    throw TrainingDivergenceError("AdamW: non-finite gradient for parameter " + name);
  }
  auto it = slots_.find(name);
  if (it == slots_.end()) {
    Slot s;
    s.m = Tensor2(param.rows, param.cols);
    s.v = Tensor2(param.rows, param.cols);
    it = slots_.emplace(name, std::move(s)).first;
  }
  Slot& s = it->second;
  require_same_shape(param, s.m, "AdamW::update state");

  // Decoupled weight decay, applied before the adaptive step.
  if (cfg_.weight_decay != 0.0) {
    const double keep = 1.0 - cfg_.lr * cfg_.weight_decay;
    scale_inplace(param, keep);
  }
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, step_);
  const double bc2 = 1.0 - std::pow(b2, step_);
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    s.m.data[i] = b1 * s.m.data[i] + (1.0 - b1) * g;
    s.v.data[i] = b2 * s.v.data[i] + (1.0 - b2) * g * g;
    const double mhat = s.m.data[i] / bc1;
    const double vhat = s.v.data[i] / bc2;
    param.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

GradCheckResult grad_check(
    std::map<std::string, Tensor2> params,
    const std::function<double(const std::map<std::string, Tensor2>&, LayerGrads*)>& loss_and_grads,
    double epsilon, SeededRng& rng, int max_coords_per_tensor) {
  if (!(epsilon > 0.0)) {
    throw InputError("grad_check: epsilon must be positive");
  }
  LayerGrads analytic;
  loss_and_grads(params, &analytic);

  GradCheckResult res;
  for (auto& [name, tensor] : params) {
    const Tensor2* ag = nullptr;
    auto it = analytic.find(name);
    if (it != analytic.end()) ag = &it->second;

    const int total = static_cast<int>(tensor.size());
    std::vector<int> coords;
    if (max_coords_per_tensor <= 0 || total <= max_coords_per_tensor) {
      coords.resize(total);
      for (int i = 0; i < total; ++i) coords[i] = i;
    } else {
      coords.reserve(max_coords_per_tensor);
      for (int i = 0; i < max_coords_per_tensor; ++i) {
        coords.push_back(static_cast<int>(rng.next_below(total)));
      }
    }
    for (int idx : coords) {
      const double saved = tensor.data[idx];
      tensor.data[idx] = saved + epsilon;
      const double lp = loss_and_grads(params, nullptr);
      tensor.data[idx] = saved - epsilon;
      const double lm = loss_and_grads(params, nullptr);
      tensor.data[idx] = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = ag != nullptr ? ag->data[idx] : 0.0;
      const double rel = std::fabs(a - numeric) /
                         std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = idx;
      }
    }
  }
  return res;
}

}  // namespace attrdial
