#include "attrdial/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "attrdial/error.hpp"
#include "attrdial/hash.hpp"

namespace attrdial {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kLogVarClamp = 10.0;

void init_affine(AffineParams& a, int in, int out, SeededRng& rng) {
  a.w = Tensor2(in, out);
  a.b = Tensor2(1, out);
  init_uniform_fan_in(a.w, in, rng);
}

}  // namespace

CvaeParams CvaeParams::init(const CvaeDims& dims, const std::vector<int>& head_sizes,
                            SeededRng& rng) {
  if (dims.vocab < 5 || dims.emb < 1 || dims.hidden < 1 || dims.latent < 1) {
    throw InputError("CvaeParams::init: bad dims vocab=" + std::to_string(dims.vocab) +
                     " emb=" + std::to_string(dims.emb) + " hidden=" +
                     std::to_string(dims.hidden) + " latent=" + std::to_string(dims.latent));
  }
  CvaeParams p;
  p.dims = dims;
  p.head_sizes = head_sizes;
  p.embedding = Tensor2(dims.vocab, dims.emb);
  init_uniform_fan_in(p.embedding, dims.emb, rng);
  p.enc_embedding = Tensor2(dims.vocab, dims.emb);
  init_uniform_fan_in(p.enc_embedding, dims.emb, rng);

  init_affine(p.post.l1, dims.emb, dims.hidden, rng);
  init_affine(p.post.l2, dims.hidden, 2 * dims.latent, rng);
  init_affine(p.prior.l1, dims.emb, dims.hidden, rng);
  init_affine(p.prior.l2, dims.hidden, 2 * dims.latent, rng);
  // Start both encoders narrow: a negative log-variance bias keeps early
  // reparameterization noise from drowning the initially small signal in mu.
  for (int d = dims.latent; d < 2 * dims.latent; ++d) {
    p.post.l2.b.at(0, d) = -2.0;
    p.prior.l2.b.at(0, d) = -2.0;
  }

  init_affine(p.latent_to_hidden, dims.latent + dims.emb, dims.hidden, rng);

  const int gin = dims.emb + dims.latent;
  p.gru = GruParams::zeros(gin, dims.hidden);
  init_uniform_fan_in(p.gru.wu, gin, rng);
  init_uniform_fan_in(p.gru.uu, dims.hidden, rng);
  init_uniform_fan_in(p.gru.wr, gin, rng);
  init_uniform_fan_in(p.gru.ur, dims.hidden, rng);
  init_uniform_fan_in(p.gru.wn, gin, rng);
  init_uniform_fan_in(p.gru.un, dims.hidden, rng);

  init_affine(p.out_proj, dims.hidden, dims.vocab, rng);

  p.heads.resize(head_sizes.size());
  for (size_t i = 0; i < head_sizes.size(); ++i) {
    if (head_sizes[i] < 2) {
      throw InputError("CvaeParams::init: head " + std::to_string(i) + " needs >= 2 classes");
    }
    init_affine(p.heads[i], dims.latent, head_sizes[i], rng);
  }
  return p;
}

namespace {

template <typename Self, typename Fn>
void visit_params(Self& p, const Fn& fn) {
  fn("emb", p.embedding);
  fn("enc_emb", p.enc_embedding);
  fn("post.w1", p.post.l1.w);
  fn("post.b1", p.post.l1.b);
  fn("post.w2", p.post.l2.w);
  fn("post.b2", p.post.l2.b);
  fn("prior.w1", p.prior.l1.w);
  fn("prior.b1", p.prior.l1.b);
  fn("prior.w2", p.prior.l2.w);
  fn("prior.b2", p.prior.l2.b);
  fn("dec.h0.w", p.latent_to_hidden.w);
  fn("dec.h0.b", p.latent_to_hidden.b);
  fn("dec.gru.wu", p.gru.wu);
  fn("dec.gru.uu", p.gru.uu);
  fn("dec.gru.bu", p.gru.bu);
  fn("dec.gru.wr", p.gru.wr);
  fn("dec.gru.ur", p.gru.ur);
  fn("dec.gru.br", p.gru.br);
  fn("dec.gru.wn", p.gru.wn);
  fn("dec.gru.un", p.gru.un);
  fn("dec.gru.bn", p.gru.bn);
  fn("dec.out.w", p.out_proj.w);
  fn("dec.out.b", p.out_proj.b);
  for (size_t i = 0; i < p.heads.size(); ++i) {
    fn("head." + std::to_string(i) + ".w", p.heads[i].w);
    fn("head." + std::to_string(i) + ".b", p.heads[i].b);
  }
}

}  // namespace

void CvaeParams::for_each_param(const std::function<void(const std::string&, Tensor2&)>& fn) {
  visit_params(*this, fn);
}

void CvaeParams::for_each_param(
    const std::function<void(const std::string&, const Tensor2&)>& fn) const {
  visit_params(*this, fn);
}

std::map<std::string, Tensor2> CvaeParams::snapshot() const {
  std::map<std::string, Tensor2> out;
  for_each_param([&out](const std::string& name, const Tensor2& t) { out[name] = t; });
  return out;
}

void CvaeParams::load_from(const std::map<std::string, Tensor2>& tensors) {
  for_each_param([&tensors](const std::string& name, Tensor2& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw IntegrityError("checkpoint is missing tensor " + name);
    }
    if (!t.same_shape(it->second)) {
      throw IntegrityError("checkpoint tensor " + name + " has shape " +
                           it->second.shape_str() + ", expected " + t.shape_str());
    }
    t = it->second;
  });
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

std::vector<int> context_bag(const DialogueExample& ex) {
  std::vector<int> bag;
  for (const auto& turn : ex.context) {
    bag.insert(bag.end(), turn.begin(), turn.end());
    bag.push_back(Vocab::kEos);
  }
  if (bag.empty()) {
    throw InputError("context_bag: example has no context turns");
  }
  return bag;
}

std::vector<int> posterior_bag(const DialogueExample& ex) {
  std::vector<int> bag = context_bag(ex);
  bag.insert(bag.end(), ex.response.begin(), ex.response.end());
  bag.push_back(Vocab::kEos);
  return bag;
}

namespace {

// h1 = tanh(x.w1 + b1); out = h1.w2 + b2
void mlp_forward(const MlpParams& m, const Tensor2& x, Tensor2& h1, Tensor2& out) {
  h1 = affine_forward(x, m.l1.w, m.l1.b);
  for (double& v : h1.data) v = std::tanh(v);
  out = affine_forward(h1, m.l2.w, m.l2.b);
}

void mlp_backward(const MlpParams& m, const Tensor2& x, const Tensor2& h1,
                  const Tensor2& dout, const std::string& prefix, LayerGrads& grads,
                  Tensor2& dx_accum) {
  AffineBack b2 = affine_backward(h1, m.l2.w, dout);
  add_inplace(grads.at(prefix + ".w2"), b2.dw);
  add_inplace(grads.at(prefix + ".b2"), b2.db);
  Tensor2& dh1 = b2.dx;
  for (size_t i = 0; i < dh1.size(); ++i) dh1.data[i] *= 1.0 - h1.data[i] * h1.data[i];
  AffineBack b1 = affine_backward(x, m.l1.w, dh1);
  add_inplace(grads.at(prefix + ".w1"), b1.dw);
  add_inplace(grads.at(prefix + ".b1"), b1.db);
  add_inplace(dx_accum, b1.dx);
}

// Splits encoder output into (mu, clamped log_var); clamp_mask marks entries
// whose gradient must be dropped.
void split_gauss(const Tensor2& enc_out, Tensor2& mu, Tensor2& log_var,
                 std::vector<char>& clamp_mask) {
  const int latent = enc_out.cols / 2;
  mu = Tensor2(enc_out.rows, latent);
  log_var = Tensor2(enc_out.rows, latent);
  clamp_mask.assign(static_cast<size_t>(enc_out.rows) * latent, 0);
  for (int i = 0; i < enc_out.rows; ++i) {
    for (int d = 0; d < latent; ++d) {
      mu.at(i, d) = enc_out.at(i, d);
      double lv = enc_out.at(i, latent + d);
      if (lv > kLogVarClamp) {
        lv = kLogVarClamp;
        clamp_mask[static_cast<size_t>(i) * latent + d] = 1;
      } else if (lv < -kLogVarClamp) {
        lv = -kLogVarClamp;
        clamp_mask[static_cast<size_t>(i) * latent + d] = 1;
      }
      log_var.at(i, d) = lv;
    }
  }
}

void merge_gauss_grad(const Tensor2& dmu, const Tensor2& dlog_var,
                      const std::vector<char>& clamp_mask, Tensor2& denc_out) {
  const int latent = dmu.cols;
  denc_out = Tensor2(dmu.rows, 2 * latent);
  for (int i = 0; i < dmu.rows; ++i) {
    for (int d = 0; d < latent; ++d) {
      denc_out.at(i, d) = dmu.at(i, d);
      denc_out.at(i, latent + d) =
          clamp_mask[static_cast<size_t>(i) * latent + d] ? 0.0 : dlog_var.at(i, d);
    }
  }
}

LatentGaussian gauss_row(const Tensor2& mu, const Tensor2& log_var, int row) {
  LatentGaussian g;
  g.mu.assign(mu.row(row), mu.row(row) + mu.cols);
  g.log_var.assign(log_var.row(row), log_var.row(row) + log_var.cols);
  return g;
}

}  // namespace

LatentGaussian encode_posterior(const CvaeParams& p, const DialogueExample& ex) {
  const std::vector<std::vector<int>> bags = {posterior_bag(ex)};
  Tensor2 pooled = embedding_bag_mean(p.enc_embedding, bags);
  Tensor2 h1, out;
  mlp_forward(p.post, pooled, h1, out);
  Tensor2 mu, lv;
  std::vector<char> mask;
  split_gauss(out, mu, lv, mask);
  return gauss_row(mu, lv, 0);
}

LatentGaussian encode_prior(const CvaeParams& p, const DialogueExample& ex) {
  const std::vector<std::vector<int>> bags = {context_bag(ex)};
  Tensor2 pooled = embedding_bag_mean(p.enc_embedding, bags);
  Tensor2 h1, out;
  mlp_forward(p.prior, pooled, h1, out);
  Tensor2 mu, lv;
  std::vector<char> mask;
  split_gauss(out, mu, lv, mask);
  return gauss_row(mu, lv, 0);
}

std::vector<double> reparameterize(const LatentGaussian& g, SeededRng& rng) {
  if (g.mu.size() != g.log_var.size()) {
    throw DimensionError("reparameterize: mu has " + std::to_string(g.mu.size()) +
                         " dims, log_var has " + std::to_string(g.log_var.size()));
  }
  std::vector<double> z(g.mu.size());
  for (size_t d = 0; d < z.size(); ++d) {
    z[d] = g.mu[d] + std::exp(0.5 * g.log_var[d]) * rng.next_gaussian();
  }
  return z;
}

double kl_diag_gaussian(const LatentGaussian& p, const LatentGaussian& q) {
  if (p.mu.size() != q.mu.size() || p.mu.size() != p.log_var.size() ||
      q.mu.size() != q.log_var.size()) {
    throw DimensionError("kl_diag_gaussian: dimension mismatch (" +
                         std::to_string(p.mu.size()) + " vs " +
                         std::to_string(q.mu.size()) + ")");
  }
  double kl = 0.0;
  for (size_t d = 0; d < p.mu.size(); ++d) {
    const double vp = std::exp(p.log_var[d]);
    const double vq = std::exp(q.log_var[d]);
    const double dm = p.mu[d] - q.mu[d];
    kl += 0.5 * (q.log_var[d] - p.log_var[d]) + (vp + dm * dm) / (2.0 * vq) - 0.5;
  }
  return kl;
}

double kl_weight(long step, int cycle_len) {
  if (cycle_len <= 0) {
    throw InputError("kl_weight: cycle_len must be positive");
  }
  const long pos = step % cycle_len;
  const double half = cycle_len / 2.0;
  if (half <= 0.0 || pos >= half) return 1.0;
  return static_cast<double>(pos) / half;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

namespace {

// Teacher-forced batch decode; forward always, backward when grads != null.
// Returns the batch loss (mean over examples of mean token NLL incl. EOS).
// dz/dpooled_ctx accumulate when provided.
double decode_batch(const CvaeParams& p, const std::vector<const DialogueExample*>& batch,
                    const Tensor2& z, const Tensor2& pooled_ctx, int max_len,
                    LayerGrads* grads, Tensor2* dz, Tensor2* dpooled_ctx) {
  const int b_sz = static_cast<int>(batch.size());
  const int latent = p.dims.latent;
  const int emb_dim = p.dims.emb;
  const int hidden = p.dims.hidden;
  if (z.rows != b_sz || z.cols != latent) {
    throw DimensionError("decode_batch: z is " + z.shape_str() + ", expected " +
                         std::to_string(b_sz) + "x" + std::to_string(latent));
  }
  int max_resp = 0;
  for (const auto* ex : batch) {
    const int len = static_cast<int>(ex->response.size());
    if (len > max_len) {
      throw InputError("decode_batch: response of " + std::to_string(len) +
                       " tokens exceeds max_len " + std::to_string(max_len));
    }
    max_resp = std::max(max_resp, len);
  }
  const int steps = max_resp + 1;  // predictions include the closing EOS

  // h0 = tanh(affine([z ; pooled_ctx]))
  Tensor2 zc(b_sz, latent + emb_dim);
  for (int i = 0; i < b_sz; ++i) {
    std::copy(z.row(i), z.row(i) + latent, zc.row(i));
    std::copy(pooled_ctx.row(i), pooled_ctx.row(i) + emb_dim, zc.row(i) + latent);
  }
  Tensor2 h = affine_forward(zc, p.latent_to_hidden.w, p.latent_to_hidden.b);
  for (double& v : h.data) v = std::tanh(v);
  const Tensor2 h0 = h;

  std::vector<double> row_weight(b_sz);
  for (int i = 0; i < b_sz; ++i) {
    row_weight[i] = 1.0 / ((static_cast<double>(batch[i]->response.size()) + 1.0) * b_sz);
  }

  const bool want_back = grads != nullptr;
  std::vector<GruCache> caches(want_back ? steps : 0);
  std::vector<Tensor2> dlogits(want_back ? steps : 0);
  std::vector<Tensor2> hs(want_back ? steps : 0);
  std::vector<std::vector<int>> prev_ids(steps, std::vector<int>(b_sz));

  double loss = 0.0;
  Tensor2 x(b_sz, emb_dim + latent);
  Tensor2 logits;
  std::vector<int> targets(b_sz);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < b_sz; ++i) {
      const auto& resp = batch[i]->response;
      const int len = static_cast<int>(resp.size());
      prev_ids[t][i] = t == 0 ? Vocab::kBos : (t - 1 < len ? resp[t - 1] : Vocab::kPad);
      targets[i] = t < len ? resp[t] : (t == len ? Vocab::kEos : -1);
    }
    for (int i = 0; i < b_sz; ++i) {
      const double* erow = p.embedding.row(prev_ids[t][i]);
      double* xrow = x.row(i);
      std::copy(erow, erow + emb_dim, xrow);
      std::copy(z.row(i), z.row(i) + latent, xrow + emb_dim);
    }
    Tensor2 h_next = gru_step(p.gru, x, h, want_back ? &caches[t] : nullptr);
    logits = affine_forward(h_next, p.out_proj.w, p.out_proj.b);
    loss += softmax_cross_entropy(logits, targets, row_weight,
                                  want_back ? &dlogits[t] : nullptr);
    if (want_back) hs[t] = h_next;
    h = std::move(h_next);
  }
  if (!want_back) return loss;

  Tensor2& demb = grads_slot(*grads, "emb", p.embedding.rows, p.embedding.cols);
  Tensor2 dh(b_sz, hidden);
  GruGrads gacc = GruGrads::zeros_like(p.gru);
  Tensor2& dout_w = grads_slot(*grads, "dec.out.w", hidden, p.dims.vocab);
  Tensor2& dout_b = grads_slot(*grads, "dec.out.b", 1, p.dims.vocab);
  for (int t = steps - 1; t >= 0; --t) {
    matmul_at_b_into(hs[t], dlogits[t], dout_w, /*accumulate=*/true);
    add_inplace(dout_b, column_sums(dlogits[t]));
    matmul_a_bt_into(dlogits[t], p.out_proj.w, dh, /*accumulate=*/true);
    GruBack back = gru_backward(p.gru, caches[t], dh, gacc);
    // Split dx into embedding rows and the per-step latent input.
    for (int i = 0; i < b_sz; ++i) {
      const double* dxrow = back.dx.row(i);
      double* erow = demb.row(prev_ids[t][i]);
      for (int j = 0; j < emb_dim; ++j) erow[j] += dxrow[j];
      if (dz != nullptr) {
        double* dzrow = dz->row(i);
        for (int j = 0; j < latent; ++j) dzrow[j] += dxrow[emb_dim + j];
      }
    }
    dh = std::move(back.dh_prev);
  }
  add_inplace(grads->at("dec.gru.wu"), gacc.wu);
  add_inplace(grads->at("dec.gru.uu"), gacc.uu);
  add_inplace(grads->at("dec.gru.bu"), gacc.bu);
  add_inplace(grads->at("dec.gru.wr"), gacc.wr);
  add_inplace(grads->at("dec.gru.ur"), gacc.ur);
  add_inplace(grads->at("dec.gru.br"), gacc.br);
  add_inplace(grads->at("dec.gru.wn"), gacc.wn);
  add_inplace(grads->at("dec.gru.un"), gacc.un);
  add_inplace(grads->at("dec.gru.bn"), gacc.bn);

  // Initial-state path.
  for (size_t i = 0; i < dh.size(); ++i) dh.data[i] *= 1.0 - h0.data[i] * h0.data[i];
  AffineBack hb = affine_backward(zc, p.latent_to_hidden.w, dh);
  add_inplace(grads->at("dec.h0.w"), hb.dw);
  add_inplace(grads->at("dec.h0.b"), hb.db);
  for (int i = 0; i < b_sz; ++i) {
    const double* drow = hb.dx.row(i);
    if (dz != nullptr) {
      double* dzrow = dz->row(i);
      for (int j = 0; j < latent; ++j) dzrow[j] += drow[j];
    }
    if (dpooled_ctx != nullptr) {
      double* dcrow = dpooled_ctx->row(i);
      for (int j = 0; j < emb_dim; ++j) dcrow[j] += drow[latent + j];
    }
  }
  return loss;
}

// Dense-initializes a gradient entry for every parameter.
void init_dense_grads(const CvaeParams& p, LayerGrads& grads) {
  p.for_each_param([&grads](const std::string& name, const Tensor2& t) {
    grads_slot(grads, name, t.rows, t.cols);
  });
}

}  // namespace

double decode_teacher_forced(const CvaeParams& p, const DialogueExample& ex,
                             const std::vector<double>& z, int max_len,
                             LayerGrads* grads, std::vector<double>* dz) {
  if (static_cast<int>(z.size()) != p.dims.latent) {
    throw DimensionError("decode_teacher_forced: z has " + std::to_string(z.size()) +
                         " dims, model latent is " + std::to_string(p.dims.latent));
  }
  const std::vector<const DialogueExample*> batch = {&ex};
  const std::vector<std::vector<int>> bags = {context_bag(ex)};
  Tensor2 pooled = embedding_bag_mean(p.embedding, bags);
  Tensor2 zt(1, p.dims.latent);
  std::copy(z.begin(), z.end(), zt.row(0));

  if (grads == nullptr && dz == nullptr) {
    return decode_batch(p, batch, zt, pooled, max_len, nullptr, nullptr, nullptr);
  }
  LayerGrads local;
  LayerGrads& g = grads != nullptr ? *grads : local;
  init_dense_grads(p, g);
  Tensor2 dzt(1, p.dims.latent);
  Tensor2 dpooled(1, p.dims.emb);
  const double loss = decode_batch(p, batch, zt, pooled, max_len, &g, &dzt, &dpooled);
  embedding_bag_mean_backward(dpooled, bags, g.at("emb"));
  if (dz != nullptr) {
    dz->assign(dzt.row(0), dzt.row(0) + p.dims.latent);
  }
  return loss;
}

std::vector<int> decode_greedy(const CvaeParams& p,
                               const std::vector<std::vector<int>>& context,
                               const std::vector<double>& z, int max_len) {
  if (static_cast<int>(z.size()) != p.dims.latent) {
    throw DimensionError("decode_greedy: z has " + std::to_string(z.size()) +
                         " dims, model latent is " + std::to_string(p.dims.latent));
  }
  DialogueExample stub;
  stub.context = context;
  const std::vector<std::vector<int>> bags = {context_bag(stub)};
  Tensor2 pooled = embedding_bag_mean(p.embedding, bags);

  Tensor2 zc(1, p.dims.latent + p.dims.emb);
  std::copy(z.begin(), z.end(), zc.row(0));
  std::copy(pooled.row(0), pooled.row(0) + p.dims.emb, zc.row(0) + p.dims.latent);
  Tensor2 h = affine_forward(zc, p.latent_to_hidden.w, p.latent_to_hidden.b);
  for (double& v : h.data) v = std::tanh(v);

  std::vector<int> out;
  int prev = Vocab::kBos;
  Tensor2 x(1, p.dims.emb + p.dims.latent);
  for (int t = 0; t < max_len; ++t) {
    const double* erow = p.embedding.row(prev);
    std::copy(erow, erow + p.dims.emb, x.row(0));
    std::copy(z.begin(), z.end(), x.row(0) + p.dims.emb);
    h = gru_step(p.gru, x, h);
    Tensor2 logits = affine_forward(h, p.out_proj.w, p.out_proj.b);
    int best = 0;
    const double* lrow = logits.row(0);
    for (int j = 1; j < logits.cols; ++j) {
      if (lrow[j] > lrow[best]) best = j;
    }
    if (best == Vocab::kEos) break;
    out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Auxiliary losses
// ---------------------------------------------------------------------------

double aspect_classification_loss(const CvaeParams& p, const Tensor2& z,
                                  const std::vector<const DialogueExample*>& batch,
                                  LayerGrads* grads, Tensor2* dz) {
  const int b_sz = static_cast<int>(batch.size());
  if (z.rows != b_sz || z.cols != p.dims.latent) {
    throw DimensionError("aspect_classification_loss: z is " + z.shape_str());
  }
  const std::vector<double> row_weight(b_sz, 1.0 / b_sz);
  std::vector<int> targets(b_sz);
  double loss = 0.0;
  for (size_t a = 0; a < p.heads.size(); ++a) {
    bool any = false;
    for (int i = 0; i < b_sz; ++i) {
      auto it = batch[i]->labels.find(static_cast<int>(a));
      targets[i] = it == batch[i]->labels.end() ? -1 : it->second;
      any = any || targets[i] >= 0;
    }
    if (!any) continue;
    Tensor2 logits = affine_forward(z, p.heads[a].w, p.heads[a].b);
    Tensor2 dlogits;
    loss += softmax_cross_entropy(logits, targets, row_weight,
                                  grads != nullptr || dz != nullptr ? &dlogits : nullptr);
    if (grads != nullptr || dz != nullptr) {
      AffineBack back = affine_backward(z, p.heads[a].w, dlogits);
      if (grads != nullptr) {
        grads_accum(*grads, "head." + std::to_string(a) + ".w", back.dw);
        grads_accum(*grads, "head." + std::to_string(a) + ".b", back.db);
      }
      if (dz != nullptr) add_inplace(*dz, back.dx);
    }
  }
  return loss;
}

double attribute_distance_loss(const std::vector<Tensor2>& groups,
                               std::vector<Tensor2>* dgroups, double threshold) {
  if (groups.size() < 2) {
    throw BatchingError("attribute_distance_loss: need at least 2 attribute groups");
  }
  std::vector<Tensor2> means;
  means.reserve(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].rows == 0) {
      throw BatchingError("attribute_distance_loss: attribute group " +
                          std::to_string(g) + " is empty");
    }
    Tensor2 m = column_sums(groups[g]);
    scale_inplace(m, 1.0 / groups[g].rows);
    means.push_back(std::move(m));
  }
  if (dgroups != nullptr) {
    dgroups->clear();
    for (const Tensor2& g : groups) dgroups->push_back(Tensor2(g.rows, g.cols));
  }
  double loss = 0.0;
  for (size_t a = 0; a + 1 < groups.size(); ++a) {
    for (size_t b = a + 1; b < groups.size(); ++b) {
      Tensor2 diff = sub(means[a], means[b]);
      const double norm = std::sqrt(frob_norm_sq(diff));
      loss += std::max(norm, threshold);
      if (dgroups != nullptr && norm > std::max(threshold, 1e-12)) {
        // d norm / d mean_a = diff / norm; each row of group a gets 1/n_a of it.
        for (int which = 0; which < 2; ++which) {
          const size_t g = which == 0 ? a : b;
          const double sign = which == 0 ? 1.0 : -1.0;
          Tensor2& dst = (*dgroups)[g];
          const double s = sign / (norm * groups[g].rows);
          for (int r = 0; r < dst.rows; ++r) {
            double* row = dst.row(r);
            for (int c = 0; c < dst.cols; ++c) row[c] += s * diff.data[c];
          }
        }
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Full loss
// ---------------------------------------------------------------------------

void TrainConfig::validate(const AttributeSchema& schema) const {
  auto fail = [](const std::string& msg) { throw ValidationError("train config: " + msg); };
  if (latent_dim < 1) fail("latent_dim must be positive");
  if (hidden_dim < 1) fail("hidden_dim must be positive");
  if (emb_dim < 1) fail("emb_dim must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (kl_cycle_len < 1) fail("kl_cycle_len must be positive");
  if (kl_threshold < 0.0) fail("kl_threshold must be non-negative");
  if (w_recon < 0 || w_kl < 0 || w_lc < 0 || w_ld < 0) fail("loss weights must be non-negative");
  if (ld_warmup_epochs < 0) fail("ld_warmup_epochs must be non-negative");
  if (ld_ramp_epochs < 0) fail("ld_ramp_epochs must be non-negative");
  if (ld_threshold < 0.0) fail("ld_threshold must be non-negative");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (max_response_len < 1) fail("max_response_len must be positive");
  const int n = static_cast<int>(schema.num_attributes());
  if (n < 1) fail("schema has no attributes");
  if (batch_size % n != 0) {
    fail("batch_size " + std::to_string(batch_size) + " is not divisible by the " +
         std::to_string(n) + " attributes (stratified batching)");
  }
  for (const Attribute& a : schema.attributes) {
    const int n_asp = static_cast<int>(a.aspects.size());
    if ((batch_size / n) % n_asp != 0) {
      fail("per-attribute quota " + std::to_string(batch_size / n) +
           " is not divisible by the " + std::to_string(n_asp) + " aspects of " +
           a.name + " (aspect-balanced batching)");
    }
  }
}

LossParts cvae_loss(const CvaeParams& p, const std::vector<const DialogueExample*>& batch,
                    const Tensor2& noise, double kl_w, const TrainConfig& cfg,
                    LayerGrads* grads) {
  const int b_sz = static_cast<int>(batch.size());
  const int latent = p.dims.latent;
  if (b_sz == 0) {
    throw BatchingError("cvae_loss: empty batch");
  }
  if (noise.rows != b_sz || noise.cols != latent) {
    throw DimensionError("cvae_loss: noise is " + noise.shape_str() + ", expected " +
                         std::to_string(b_sz) + "x" + std::to_string(latent));
  }
  const bool want_back = grads != nullptr;
  if (want_back) init_dense_grads(p, *grads);

  // Pooled bags.
  std::vector<std::vector<int>> post_bags(b_sz), ctx_bags(b_sz);
  for (int i = 0; i < b_sz; ++i) {
    post_bags[i] = posterior_bag(*batch[i]);
    ctx_bags[i] = context_bag(*batch[i]);
  }
  Tensor2 pooled_post = embedding_bag_mean(p.enc_embedding, post_bags);
  Tensor2 pooled_ctx = embedding_bag_mean(p.enc_embedding, ctx_bags);
  Tensor2 pooled_ctx_dec = embedding_bag_mean(p.embedding, ctx_bags);

  // Encoders.
  Tensor2 post_h1, post_out, prior_h1, prior_out;
  mlp_forward(p.post, pooled_post, post_h1, post_out);
  mlp_forward(p.prior, pooled_ctx, prior_h1, prior_out);
  Tensor2 mu_q, lv_q, mu_p, lv_p;
  std::vector<char> mask_q, mask_p;
  split_gauss(post_out, mu_q, lv_q, mask_q);
  split_gauss(prior_out, mu_p, lv_p, mask_p);

  // Reparameterized posterior sample.
  Tensor2 z(b_sz, latent);
  for (int i = 0; i < b_sz; ++i) {
    for (int d = 0; d < latent; ++d) {
      z.at(i, d) = mu_q.at(i, d) + std::exp(0.5 * lv_q.at(i, d)) * noise.at(i, d);
    }
  }

  LossParts parts;
  parts.kl_weight = kl_w;

  // KL with per-example hinge.
  std::vector<double> kl_ex(b_sz, 0.0);
  const bool prior_first = cfg.kl_direction == KlDirection::kPriorToPosterior;
  const Tensor2& mu_a = prior_first ? mu_p : mu_q;
  const Tensor2& lv_a = prior_first ? lv_p : lv_q;
  const Tensor2& mu_b = prior_first ? mu_q : mu_p;
  const Tensor2& lv_b = prior_first ? lv_q : lv_p;
  for (int i = 0; i < b_sz; ++i) {
    double kl = 0.0;
    for (int d = 0; d < latent; ++d) {
      const double va = std::exp(lv_a.at(i, d));
      const double vb = std::exp(lv_b.at(i, d));
      const double dm = mu_a.at(i, d) - mu_b.at(i, d);
      kl += 0.5 * (lv_b.at(i, d) - lv_a.at(i, d)) + (va + dm * dm) / (2.0 * vb) - 0.5;
    }
    kl_ex[i] = kl;
    parts.kl += kl / b_sz;
    parts.kl_hinged += std::max(kl, cfg.kl_threshold) / b_sz;
  }

  // Reconstruction (+ backward below when requested). The decoder conditions
  // on its own table's pooled context.
  Tensor2 dz(want_back ? b_sz : 0, want_back ? latent : 0);
  Tensor2 dpooled_ctx_dec(want_back ? b_sz : 0, want_back ? p.dims.emb : 0);
  parts.recon = decode_batch(p, batch, z, pooled_ctx_dec, cfg.max_response_len,
                             want_back ? grads : nullptr, want_back ? &dz : nullptr,
                             want_back ? &dpooled_ctx_dec : nullptr);
  if (want_back && cfg.w_recon != 1.0) {
    // decode_batch accumulated unscaled gradients; rescale is handled by
    // scaling dz/dpooled/param grads uniformly below, so scale now.
    // (Parameter grads so far: emb/gru/out/h0 from recon only.)
    for (auto& [name, g] : *grads) scale_inplace(g, cfg.w_recon);
    scale_inplace(dz, cfg.w_recon);
    scale_inplace(dpooled_ctx_dec, cfg.w_recon);
  }

  // Aspect heads.
  Tensor2 dz_lc(want_back ? b_sz : 0, want_back ? latent : 0);
  LayerGrads lc_grads;
  parts.lc = aspect_classification_loss(p, z, batch, want_back ? &lc_grads : nullptr,
                                        want_back ? &dz_lc : nullptr);
  if (want_back) {
    for (auto& [name, g] : lc_grads) {
      scale_inplace(g, cfg.w_lc);
      add_inplace(grads->at(name), g);
    }
    axpy(cfg.w_lc, dz_lc, dz);
  }

  // Attribute-distance loss over single-label groups.
  const size_t n_attr = p.heads.size();
  std::vector<std::vector<int>> group_rows(n_attr);
  for (int i = 0; i < b_sz; ++i) {
    if (batch[i]->labels.size() != 1) {
      throw BatchingError("cvae_loss: training examples must carry exactly one label");
    }
    const int attr = batch[i]->labels.begin()->first;
    if (attr < 0 || attr >= static_cast<int>(n_attr)) {
      throw BatchingError("cvae_loss: label attribute " + std::to_string(attr) +
                          " outside schema");
    }
    group_rows[attr].push_back(i);
  }
  // Group means are computed on the posterior means rather than the sampled
  // latents: sampled sub-batch means carry reparameterization noise that
  // never averages out, so aligning them would also squeeze the posterior
  // variance and jitter the encoder long after the means coincide.
  std::vector<Tensor2> groups(n_attr);
  for (size_t a = 0; a < n_attr; ++a) {
    groups[a] = Tensor2(static_cast<int>(group_rows[a].size()), latent);
    for (size_t r = 0; r < group_rows[a].size(); ++r) {
      std::copy(mu_q.row(group_rows[a][r]), mu_q.row(group_rows[a][r]) + latent,
                groups[a].row(static_cast<int>(r)));
    }
  }
  std::vector<Tensor2> dgroups;
  parts.ld_hinged =
      attribute_distance_loss(groups, want_back ? &dgroups : nullptr, cfg.ld_threshold);
  parts.ld = cfg.ld_threshold > 0.0 ? attribute_distance_loss(groups) : parts.ld_hinged;

  parts.total = cfg.w_recon * parts.recon + kl_w * parts.kl_hinged +
                cfg.w_lc * parts.lc + cfg.w_ld * parts.ld_hinged;

  if (!want_back) return parts;

  // Backward through the reparameterization into the posterior Gaussian.
  Tensor2 dmu_q = dz;
  for (size_t a = 0; a < n_attr; ++a) {
    for (size_t r = 0; r < group_rows[a].size(); ++r) {
      const double* src = dgroups[a].row(static_cast<int>(r));
      double* dst = dmu_q.row(group_rows[a][r]);
      for (int d = 0; d < latent; ++d) dst[d] += cfg.w_ld * src[d];
    }
  }
  Tensor2 dlv_q(b_sz, latent);
  for (int i = 0; i < b_sz; ++i) {
    for (int d = 0; d < latent; ++d) {
      dlv_q.at(i, d) =
          dz.at(i, d) * 0.5 * std::exp(0.5 * lv_q.at(i, d)) * noise.at(i, d);
    }
  }

  // KL gradients (only for examples above the hinge threshold).
  Tensor2 dmu_p(b_sz, latent), dlv_p(b_sz, latent);
  for (int i = 0; i < b_sz; ++i) {
    if (kl_ex[i] <= cfg.kl_threshold) continue;
    const double s = kl_w / b_sz;
    for (int d = 0; d < latent; ++d) {
      const double va = std::exp(lv_a.at(i, d));
      const double vb = std::exp(lv_b.at(i, d));
      const double dm = mu_a.at(i, d) - mu_b.at(i, d);
      const double d_mu_a = s * dm / vb;
      const double d_lv_a = s * (-0.5 + va / (2.0 * vb));
      const double d_lv_b = s * (0.5 - (va + dm * dm) / (2.0 * vb));
      if (prior_first) {
        dmu_p.at(i, d) += d_mu_a;
        dlv_p.at(i, d) += d_lv_a;
        dmu_q.at(i, d) += -d_mu_a;
        dlv_q.at(i, d) += d_lv_b;
      } else {
        dmu_q.at(i, d) += d_mu_a;
        dlv_q.at(i, d) += d_lv_a;
        dmu_p.at(i, d) += -d_mu_a;
        dlv_p.at(i, d) += d_lv_b;
      }
    }
  }

  // Posterior encoder backward.
  Tensor2 denc_q, denc_p;
  merge_gauss_grad(dmu_q, dlv_q, mask_q, denc_q);
  merge_gauss_grad(dmu_p, dlv_p, mask_p, denc_p);
  Tensor2 dpooled_post(b_sz, p.dims.emb);
  Tensor2 dpooled_ctx(b_sz, p.dims.emb);
  mlp_backward(p.post, pooled_post, post_h1, denc_q, "post", *grads, dpooled_post);
  mlp_backward(p.prior, pooled_ctx, prior_h1, denc_p, "prior", *grads, dpooled_ctx);

  embedding_bag_mean_backward(dpooled_post, post_bags, grads->at("enc_emb"));
  embedding_bag_mean_backward(dpooled_ctx, ctx_bags, grads->at("enc_emb"));
  embedding_bag_mean_backward(dpooled_ctx_dec, ctx_bags, grads->at("emb"));
  return parts;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> stratified_batches(
    const std::vector<DialogueExample>& data, const AttributeSchema& schema,
    int batch_size, SeededRng& rng) {
  const int n_attr = static_cast<int>(schema.num_attributes());
  if (n_attr == 0 || batch_size % n_attr != 0) {
    throw BatchingError("stratified_batches: batch size " + std::to_string(batch_size) +
                        " not divisible by " + std::to_string(n_attr) + " attributes");
  }
  const int quota = batch_size / n_attr;
  // Pools are keyed by (attribute, aspect) and each batch draws equal aspect
  // shares. Attribute-level pooling alone lets per-batch attribute means
  // wobble along the aspect axes; the distance loss reads that wobble as
  // misalignment and squeezes the aspect separation itself.
  std::vector<std::vector<std::vector<int>>> pools(n_attr);
  for (int a = 0; a < n_attr; ++a) {
    const int n_asp = static_cast<int>(schema.attributes[a].aspects.size());
    if (quota % n_asp != 0) {
      throw BatchingError("stratified_batches: per-attribute quota " +
                          std::to_string(quota) + " not divisible by the " +
                          std::to_string(n_asp) + " aspects of attribute " +
                          schema.attributes[a].name);
    }
    pools[a].resize(n_asp);
  }
  for (size_t i = 0; i < data.size(); ++i) {
    if (data[i].labels.size() != 1) {
      throw BatchingError("stratified_batches: example " + std::to_string(i) +
                          " must carry exactly one label");
    }
    const auto [attr, aspect] = *data[i].labels.begin();
    if (attr < 0 || attr >= n_attr || aspect < 0 ||
        aspect >= static_cast<int>(pools[attr].size())) {
      throw BatchingError("stratified_batches: label out of range for example " +
                          std::to_string(i));
    }
    pools[attr][aspect].push_back(static_cast<int>(i));
  }
  size_t n_batches = SIZE_MAX;
  for (int a = 0; a < n_attr; ++a) {
    const int aspect_quota = quota / static_cast<int>(pools[a].size());
    for (size_t s = 0; s < pools[a].size(); ++s) {
      SeededRng r = rng.substream("pool")
                        .substream(static_cast<uint64_t>(a))
                        .substream(static_cast<uint64_t>(s));
      r.shuffle(pools[a][s]);
      n_batches = std::min(n_batches, pools[a][s].size() / aspect_quota);
    }
  }
  if (n_batches == 0 || n_batches == SIZE_MAX) {
    throw BatchingError("stratified_batches: an aspect pool is too small for its "
                        "per-batch share");
  }
  std::vector<std::vector<int>> batches(n_batches);
  for (size_t b = 0; b < n_batches; ++b) {
    auto& batch = batches[b];
    batch.reserve(batch_size);
    for (int a = 0; a < n_attr; ++a) {
      const int aspect_quota = quota / static_cast<int>(pools[a].size());
      for (size_t s = 0; s < pools[a].size(); ++s) {
        for (int k = 0; k < aspect_quota; ++k) {
          batch.push_back(pools[a][s][b * aspect_quota + k]);
        }
      }
    }
  }
  return batches;
}

TrainResult train_cvae(const AttributeSchema& schema, const Vocab& vocab,
                       const std::vector<DialogueExample>& train_data,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate(schema);
  if (train_data.empty()) {
    throw BatchingError("train_cvae: empty training set");
  }
  for (size_t i = 0; i < train_data.size(); ++i) {
    if (static_cast<int>(train_data[i].response.size()) > cfg.max_response_len) {
      throw InputError("train_cvae: example " + std::to_string(i) + " response has " +
                       std::to_string(train_data[i].response.size()) +
                       " tokens, max is " + std::to_string(cfg.max_response_len));
    }
  }
  CvaeDims dims;
  dims.vocab = static_cast<int>(vocab.size());
  dims.emb = cfg.emb_dim;
  dims.hidden = cfg.hidden_dim;
  dims.latent = cfg.latent_dim;
  std::vector<int> head_sizes;
  for (const Attribute& a : schema.attributes) {
    head_sizes.push_back(static_cast<int>(a.aspects.size()));
  }

  SeededRng init_rng(cfg.seed, "cvae-init");
  TrainResult result;
  result.params = CvaeParams::init(dims, head_sizes, init_rng);

  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  SeededRng batch_rng(cfg.seed, "cvae-batches");
  SeededRng noise_rng(cfg.seed, "cvae-noise");

  long gstep = 0;
  LayerGrads grads;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    TrainConfig epoch_cfg = cfg;
    if (epoch <= cfg.ld_warmup_epochs) {
      epoch_cfg.w_ld = 0.0;
    } else if (cfg.ld_ramp_epochs > 0) {
      const double frac = static_cast<double>(epoch - cfg.ld_warmup_epochs) /
                          static_cast<double>(cfg.ld_ramp_epochs);
      epoch_cfg.w_ld = cfg.w_ld * std::min(1.0, frac);
    }
    SeededRng epoch_rng = batch_rng.substream(static_cast<uint64_t>(epoch));
    const auto batches = stratified_batches(train_data, schema, cfg.batch_size, epoch_rng);
    LossRecord mean{};
    for (const auto& batch_ids : batches) {
      std::vector<const DialogueExample*> batch;
      batch.reserve(batch_ids.size());
      for (int id : batch_ids) batch.push_back(&train_data[id]);

      Tensor2 noise(static_cast<int>(batch.size()), cfg.latent_dim);
      for (double& v : noise.data) v = noise_rng.next_gaussian();

      const double klw = cfg.w_kl * kl_weight(gstep, cfg.kl_cycle_len);
      grads.clear();
      LossParts parts = cvae_loss(result.params, batch, noise, klw, epoch_cfg, &grads);
      if (!std::isfinite(parts.total)) {
        throw TrainingDivergenceError("train_cvae: non-finite loss at epoch " +
                                      std::to_string(epoch) + " step " +
                                      std::to_string(gstep));
      }
      clip_global_norm(grads, cfg.clip_norm);
      opt.begin_step();
      result.params.for_each_param([&](const std::string& name, Tensor2& t) {
        opt.update(name, t, grads.at(name));
      });

      ++gstep;
      LossRecord rec{epoch, gstep, parts.recon, parts.kl, klw, parts.lc, parts.ld,
                     parts.total};
      result.log.push_back(rec);
      mean.recon += parts.recon;
      mean.kl += parts.kl;
      mean.kl_weight += klw;
      mean.lc += parts.lc;
      mean.ld += parts.ld;
      mean.total += parts.total;
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    mean.epoch = epoch;
    mean.step = gstep;
    mean.recon *= inv;
    mean.kl *= inv;
    mean.kl_weight *= inv;
    mean.lc *= inv;
    mean.ld *= inv;
    mean.total *= inv;
    result.epoch_means.push_back(mean);
    if (on_epoch) on_epoch(mean);
  }
  return result;
}

void save_loss_log_csv(const std::string& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write loss log: " + path);
  }
  out << "epoch,step,recon,kl,kl_weight,lc,ld,total\n";
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const LossRecord& r : log) {
    out << r.epoch << ',' << r.step << ',' << fmt(r.recon) << ',' << fmt(r.kl) << ','
        << fmt(r.kl_weight) << ',' << fmt(r.lc) << ',' << fmt(r.ld) << ','
        << fmt(r.total) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::map<std::string, Tensor2>& tensors) {
  std::string body;
  body.reserve(1 << 20);
  body += "{\"format_version\":";
  body += std::to_string(kFormatVersion);
  body += ",\"meta\":";
  body += meta_json;
  body += ",\"tensors\":{";
  bool first = true;
  for (const auto& [name, t] : tensors) {
    if (!first) body += ',';
    first = false;
    body += '"';
    body += name;
    body += "\":{\"shape\":[";
    body += std::to_string(t.rows);
    body += ',';
    body += std::to_string(t.cols);
    body += "],\"data\":[";
    for (size_t i = 0; i < t.size(); ++i) {
      if (i > 0) body += ',';
      append_double(body, t.data[i]);
    }
    body += "]}";
  }
  body += "}}\n";
  const uint32_t crc = crc32(body);

  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw InputError("cannot write checkpoint: " + tmp);
    }
    out << body << "crc32 " << hex_u32(crc) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open checkpoint: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string all = ss.str();
  if (all.empty() || all.back() != '\n') {
    throw IntegrityError("checkpoint " + path + " is truncated (no trailing newline)");
  }
  all.pop_back();
  const size_t nl = all.rfind('\n');
  if (nl == std::string::npos) {
    throw IntegrityError("checkpoint " + path + " is missing its checksum line");
  }
  const std::string last = all.substr(nl + 1);
  const std::string body = all.substr(0, nl + 1);
  if (last.rfind("crc32 ", 0) != 0 || last.size() != 6 + 8) {
    throw IntegrityError("checkpoint " + path + " has a malformed checksum line");
  }
  const uint32_t stored = static_cast<uint32_t>(std::stoul(last.substr(6), nullptr, 16));
  if (crc32(body) != stored) {
    throw IntegrityError("checkpoint " + path + " failed its CRC32 check");
  }

  json root;
  try {
    root = json::parse(body);
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint " + path + " body is not valid JSON: " + e.what());
  }
  if (!root.contains("format_version") || !root["format_version"].is_number_integer()) {
    throw IntegrityError("checkpoint " + path + " is missing format_version");
  }
  if (root["format_version"].get<int>() != kFormatVersion) {
    throw VersionError("checkpoint " + path + " has format_version " +
                       root["format_version"].dump() + ", this build reads " +
                       std::to_string(kFormatVersion));
  }
  Checkpoint ck;
  ck.meta_json = root["meta"].dump();
  for (const auto& [name, spec] : root["tensors"].items()) {
    if (!spec.contains("shape") || !spec.contains("data")) {
      throw IntegrityError("checkpoint tensor " + name + " is malformed");
    }
    const int r = spec["shape"][0].get<int>();
    const int c = spec["shape"][1].get<int>();
    Tensor2 t(r, c);
    const auto& data = spec["data"];
    if (static_cast<size_t>(data.size()) != t.size()) {
      throw IntegrityError("checkpoint tensor " + name + " has " +
                           std::to_string(data.size()) + " values for shape " +
                           t.shape_str());
    }
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = data[i].get<double>();
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

void save_cvae_checkpoint(const std::string& path, const CvaeParams& params,
                          const AttributeSchema& schema, const Vocab& vocab) {
  ordered_json meta;
  meta["kind"] = "cvae";
  meta["schema"] = ordered_json::parse(schema.to_json_string());
  meta["schema_hash"] = schema.hash_hex();
  meta["vocab"] = vocab.tokens;
  meta["vocab_hash"] = vocab.hash_hex();
  meta["dims"] = {{"vocab", params.dims.vocab},
                  {"emb", params.dims.emb},
                  {"hidden", params.dims.hidden},
                  {"latent", params.dims.latent}};
  meta["head_sizes"] = params.head_sizes;
  save_checkpoint(path, meta.dump(), params.snapshot());
}

LoadedCvae load_cvae_checkpoint(const std::string& path,
                                const std::string& expected_schema_hash) {
  Checkpoint ck = load_checkpoint(path);
  json meta = json::parse(ck.meta_json);
  if (!meta.contains("kind") || meta["kind"] != "cvae") {
    throw VersionError("checkpoint " + path + " is not a cvae checkpoint");
  }
  LoadedCvae out;
  out.schema = AttributeSchema::from_json_string(meta["schema"].dump());
  const std::string stored_hash = meta["schema_hash"].get<std::string>();
  if (stored_hash != out.schema.hash_hex()) {
    throw IntegrityError("checkpoint " + path + " schema hash does not match its schema");
  }
  if (!expected_schema_hash.empty() && stored_hash != expected_schema_hash) {
    throw VersionError("checkpoint " + path + " was built for schema " + stored_hash +
                       ", expected " + expected_schema_hash);
  }
  out.vocab = Vocab::from_tokens(meta["vocab"].get<std::vector<std::string>>());
  if (meta["vocab_hash"].get<std::string>() != out.vocab.hash_hex()) {
    throw IntegrityError("checkpoint " + path + " vocab hash does not match its vocab");
  }
  CvaeDims dims;
  dims.vocab = meta["dims"]["vocab"].get<int>();
  dims.emb = meta["dims"]["emb"].get<int>();
  dims.hidden = meta["dims"]["hidden"].get<int>();
  dims.latent = meta["dims"]["latent"].get<int>();
  std::vector<int> head_sizes = meta["head_sizes"].get<std::vector<int>>();
  SeededRng dummy(0);
  out.params = CvaeParams::init(dims, head_sizes, dummy);
  out.params.load_from(ck.tensors);
  return out;
}

}  // namespace attrdial
