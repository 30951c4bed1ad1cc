// Tensors, layers, the optimizer, and the RNG, checked against hand-computed
// values and central finite differences.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "attrdial/error.hpp"
#include "attrdial/hash.hpp"
#include "attrdial/layers.hpp"
#include "attrdial/rng.hpp"
#include "attrdial/tensor.hpp"

using namespace attrdial;

namespace {

Tensor2 random_tensor(int r, int c, SeededRng& rng, double scale = 1.0) {
  Tensor2 t(r, c);
  for (double& v : t.data) v = rng.next_gaussian() * scale;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor2
// ---------------------------------------------------------------------------

TEST_CASE("matmul matches a hand-multiplied 2x3 . 3x2 example") {
  const Tensor2 a = Tensor2::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Tensor2 b = Tensor2::from_rows({{7, 8}, {9, 10}, {11, 12}});
  const Tensor2 c = matmul(a, b);
  // Row 0: (1*7+2*9+3*11, 1*8+2*10+3*12) = (58, 64)
  // Row 1: (4*7+5*9+6*11, 4*8+5*10+6*12) = (139, 154)
  CHECK(c.rows == 2);
  CHECK(c.cols == 2);
  CHECK(c.at(0, 0) == doctest::Approx(58).epsilon(1e-15));
  CHECK(c.at(0, 1) == doctest::Approx(64).epsilon(1e-15));
  CHECK(c.at(1, 0) == doctest::Approx(139).epsilon(1e-15));
  CHECK(c.at(1, 1) == doctest::Approx(154).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch raises DimensionError naming shapes") {
  const Tensor2 a(2, 3), b(2, 3);
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("transposed products agree with explicit transpose") {
  SeededRng rng(7, "tensor");
  const Tensor2 a = random_tensor(4, 3, rng);
  const Tensor2 b = random_tensor(4, 5, rng);
  Tensor2 direct(3, 5);
  matmul_at_b_into(a, b, direct);
  const Tensor2 viaT = matmul(transpose(a), b);
  for (size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct.data[i] == doctest::Approx(viaT.data[i]).epsilon(1e-12));
  }

  const Tensor2 c = random_tensor(5, 3, rng);
  Tensor2 direct2(4, 5);
  matmul_a_bt_into(a, c, direct2);
  const Tensor2 viaT2 = matmul(a, transpose(c));
  for (size_t i = 0; i < direct2.size(); ++i) {
    CHECK(direct2.data[i] == doctest::Approx(viaT2.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("accumulate flag adds instead of overwriting") {
  const Tensor2 a = Tensor2::from_rows({{1, 0}, {0, 1}});
  const Tensor2 b = Tensor2::from_rows({{2, 3}, {4, 5}});
  Tensor2 out = Tensor2::full(2, 2, 10.0);
  matmul_into(a, b, out, /*accumulate=*/true);
  CHECK(out.at(0, 0) == doctest::Approx(12).epsilon(1e-15));
  CHECK(out.at(1, 1) == doctest::Approx(15).epsilon(1e-15));
}

TEST_CASE("column_sums and axpy behave as written") {
  const Tensor2 x = Tensor2::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Tensor2 s = column_sums(x);
  CHECK(s.rows == 1);
  CHECK(s.at(0, 0) == doctest::Approx(9).epsilon(1e-15));
  CHECK(s.at(0, 1) == doctest::Approx(12).epsilon(1e-15));

  Tensor2 y = Tensor2::full(3, 2, 1.0);
  axpy(0.5, x, y);
  CHECK(y.at(0, 0) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(y.at(2, 1) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("require_finite flags NaN and Inf") {
  Tensor2 x = Tensor2::full(1, 2, 1.0);
  CHECK_NOTHROW(require_finite(x, "x"));
  x.at(0, 1) = std::nan("");
  CHECK_THROWS_AS(require_finite(x, "x"), TrainingDivergenceError);
  x.at(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(require_finite(x, "x"), TrainingDivergenceError);
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

TEST_CASE("identical seeds reproduce identical sequences") {
  SeededRng a(42, "stream");
  SeededRng b(42, "stream");
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("different stream names give different sequences") {
  SeededRng a(42, "alpha");
  SeededRng b(42, "beta");
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("substreams do not depend on parent consumption") {
  SeededRng fresh(9, "root");
  SeededRng consumed(9, "root");
  for (int i = 0; i < 17; ++i) consumed.next_u64();
  SeededRng c1 = fresh.substream("child");
  SeededRng c2 = consumed.substream("child");
  for (int i = 0; i < 20; ++i) {
    CHECK(c1.next_u64() == c2.next_u64());
  }
  SeededRng i1 = fresh.substream(uint64_t{5});
  SeededRng i2 = consumed.substream(uint64_t{5});
  for (int i = 0; i < 20; ++i) {
    CHECK(i1.next_u64() == i2.next_u64());
  }
}

TEST_CASE("unit doubles sit in [0,1) and gaussians have sane moments") {
  SeededRng rng(3, "stats");
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double g = rng.next_gaussian();
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);       // ~4 sigma for n=20000
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("next_below is in range and shuffle permutes") {
  SeededRng rng(11, "shuffle");
  for (int i = 0; i < 100; ++i) {
    CHECK(rng.next_below(7) < 7);
  }
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> orig = v;
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

// ---------------------------------------------------------------------------
// Hashes (pinned published test vectors)
// ---------------------------------------------------------------------------

TEST_CASE("fnv1a64 and crc32 match their published vectors") {
  // FNV-1a 64: offset basis for "", and the classic "a"/"foobar" vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  // CRC-32 (IEEE): "123456789" -> 0xCBF43926, "" -> 0.
  CHECK(crc32("123456789") == 0xCBF43926u);
  CHECK(crc32("") == 0u);
  CHECK(hex_u32(0xCBF43926u) == "cbf43926");
}

// ---------------------------------------------------------------------------
// Affine + GRU forward semantics
// ---------------------------------------------------------------------------

TEST_CASE("affine_forward matches x.w + b by hand") {
  const Tensor2 x = Tensor2::from_rows({{1, 2}});
  const Tensor2 w = Tensor2::from_rows({{1, 0, -1}, {2, 1, 0}});
  const Tensor2 b = Tensor2::from_rows({{0.5, -0.5, 0}});
  const Tensor2 y = affine_forward(x, w, b);
  CHECK(y.at(0, 0) == doctest::Approx(5.5).epsilon(1e-15));   // 1+4+0.5
  CHECK(y.at(0, 1) == doctest::Approx(1.5).epsilon(1e-15));   // 0+2-0.5
  CHECK(y.at(0, 2) == doctest::Approx(-1.0).epsilon(1e-15));  // -1+0+0
}

TEST_CASE("GRU with all-zero parameters halves the previous state") {
  const GruParams p = GruParams::zeros(3, 4);
  const Tensor2 x = Tensor2::full(2, 3, 0.7);
  Tensor2 h = Tensor2::from_rows({{1, -2, 0.5, 4}, {0, 1, 2, 3}});
  const Tensor2 h2 = gru_step(p, x, h);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(h2.at(r, c) == doctest::Approx(0.5 * h.at(r, c)).epsilon(1e-15));
    }
  }
}

TEST_CASE("softmax_cross_entropy: uniform logits cost ln(K), ignored rows cost 0") {
  Tensor2 logits = Tensor2::zeros(2, 5);
  Tensor2 dlogits(2, 5);
  const double loss1 =
      softmax_cross_entropy(logits, {2, -1}, {1.0, 1.0}, &dlogits);
  CHECK(loss1 == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  for (int c = 0; c < 5; ++c) {
    CHECK(dlogits.at(1, c) == doctest::Approx(0.0).epsilon(1e-15));
  }
  // Row-weight scales both loss and gradient linearly.
  Tensor2 d2(2, 5);
  const double loss2 = softmax_cross_entropy(logits, {2, -1}, {0.25, 1.0}, &d2);
  CHECK(loss2 == doctest::Approx(std::log(5.0) / 4).epsilon(1e-12));
  CHECK(d2.at(0, 2) == doctest::Approx(0.25 * dlogits.at(0, 2)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

TEST_CASE("AdamW first step is ~lr with unit gradient (bias-corrected)") {
  // m_hat = v_hat = 1 at step 1, so the step is lr / (1 + eps).
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  Tensor2 p = Tensor2::full(1, 1, 1.0);
  const Tensor2 g = Tensor2::full(1, 1, 1.0);
  opt.begin_step();
  opt.update("p", p, g);
  const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
  CHECK(p.at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("AdamW decoupled weight decay multiplies the parameter first") {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg);
  Tensor2 p = Tensor2::full(1, 1, 1.0);
  const Tensor2 g = Tensor2::full(1, 1, 1.0);
  opt.begin_step();
  opt.update("p", p, g);
  // 1 * (1 - lr*wd) = 0.95, then the adaptive step of ~lr.
  const double expected = 0.95 - 0.1 / (1.0 + 1e-8);
  CHECK(p.at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("AdamW flags non-finite gradients with the parameter name") {
  AdamW opt(AdamWConfig{});
  Tensor2 p = Tensor2::full(1, 1, 1.0);
  Tensor2 g = Tensor2::full(1, 1, std::nan(""));
  opt.begin_step();
  try {
    opt.update("dec.out.w", p, g);
    FAIL("expected TrainingDivergenceError");
  } catch (const TrainingDivergenceError& e) {
    CHECK(std::string(e.what()).find("dec.out.w") != std::string::npos);
  }
}

TEST_CASE("AdamW before begin_step is an error") {
  AdamW opt(AdamWConfig{});
  Tensor2 p = Tensor2::full(1, 1, 1.0);
  const Tensor2 g = Tensor2::full(1, 1, 1.0);
  CHECK_THROWS_AS(opt.update("p", p, g), InputError);
}

// ---------------------------------------------------------------------------
// Gradient clipping
// ---------------------------------------------------------------------------

TEST_CASE("clip_global_norm rescales only above the threshold") {
  LayerGrads grads;
  grads["a"] = Tensor2::from_rows({{3.0}});
  grads["b"] = Tensor2::from_rows({{4.0}});
  // Global norm = 5.
  const double pre = clip_global_norm(grads, 2.5);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(grads["a"].at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(grads["b"].at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  // Below threshold: untouched.
  const double pre2 = clip_global_norm(grads, 100.0);
  CHECK(pre2 == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(grads["a"].at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Finite-difference checks per layer
// ---------------------------------------------------------------------------

namespace {

// Sum-of-entries loss wrappers give each layer a scalar objective whose
// analytic gradient the layer must reproduce.
double sum_all(const Tensor2& t) {
  double s = 0.0;
  for (double v : t.data) s += v;
  return s;
}

}  // namespace

TEST_CASE("affine gradients match central differences over 100 random configs") {
  SeededRng shapes(21, "affine-shapes");
  for (int it = 0; it < 100; ++it) {
    const int b = 1 + static_cast<int>(shapes.next_below(3));
    const int in = 1 + static_cast<int>(shapes.next_below(4));
    const int out = 1 + static_cast<int>(shapes.next_below(4));
    SeededRng init = shapes.substream(static_cast<uint64_t>(it));
    std::map<std::string, Tensor2> params;
    params["x"] = random_tensor(b, in, init);
    params["w"] = random_tensor(in, out, init);
    params["b"] = random_tensor(1, out, init);
    auto loss = [&](const std::map<std::string, Tensor2>& p, LayerGrads* g) {
      const Tensor2 y = affine_forward(p.at("x"), p.at("w"), p.at("b"));
      if (g) {
        Tensor2 up = Tensor2::full(y.rows, y.cols, 1.0);
        AffineBack back = affine_backward(p.at("x"), p.at("w"), up);
        grads_accum(*g, "x", back.dx);
        grads_accum(*g, "w", back.dw);
        grads_accum(*g, "b", back.db);
      }
      return sum_all(y);
    };
    SeededRng pick = shapes.substream("pick");
    const GradCheckResult res = grad_check(params, loss, 1e-4, pick, 0);
    CHECK_MESSAGE(res.max_rel_err <= 1e-4,
                  "iter " << it << " worst " << res.worst_param << " err "
                          << res.max_rel_err);
  }
}

TEST_CASE("GRU step gradients match central differences over 100 random configs") {
  SeededRng shapes(22, "gru-shapes");
  for (int it = 0; it < 100; ++it) {
    const int b = 1 + static_cast<int>(shapes.next_below(2));
    const int in = 1 + static_cast<int>(shapes.next_below(3));
    const int hid = 1 + static_cast<int>(shapes.next_below(3));
    SeededRng init = shapes.substream(static_cast<uint64_t>(it));
    std::map<std::string, Tensor2> params;
    params["x"] = random_tensor(b, in, init, 0.8);
    params["h"] = random_tensor(b, hid, init, 0.8);
    params["wu"] = random_tensor(in, hid, init, 0.8);
    params["uu"] = random_tensor(hid, hid, init, 0.8);
    params["bu"] = random_tensor(1, hid, init, 0.8);
    params["wr"] = random_tensor(in, hid, init, 0.8);
    params["ur"] = random_tensor(hid, hid, init, 0.8);
    params["br"] = random_tensor(1, hid, init, 0.8);
    params["wn"] = random_tensor(in, hid, init, 0.8);
    params["un"] = random_tensor(hid, hid, init, 0.8);
    params["bn"] = random_tensor(1, hid, init, 0.8);
    auto loss = [&](const std::map<std::string, Tensor2>& p, LayerGrads* g) {
      GruParams gp;
      gp.wu = p.at("wu"); gp.uu = p.at("uu"); gp.bu = p.at("bu");
      gp.wr = p.at("wr"); gp.ur = p.at("ur"); gp.br = p.at("br");
      gp.wn = p.at("wn"); gp.un = p.at("un"); gp.bn = p.at("bn");
      GruCache cache;
      const Tensor2 h2 = gru_step(gp, p.at("x"), p.at("h"), &cache);
      if (g) {
        GruGrads acc = GruGrads::zeros_like(gp);
        Tensor2 up = Tensor2::full(h2.rows, h2.cols, 1.0);
        GruBack back = gru_backward(gp, cache, up, acc);
        grads_accum(*g, "x", back.dx);
        grads_accum(*g, "h", back.dh_prev);
        grads_accum(*g, "wu", acc.wu); grads_accum(*g, "uu", acc.uu);
        grads_accum(*g, "bu", acc.bu);
        grads_accum(*g, "wr", acc.wr); grads_accum(*g, "ur", acc.ur);
        grads_accum(*g, "br", acc.br);
        grads_accum(*g, "wn", acc.wn); grads_accum(*g, "un", acc.un);
        grads_accum(*g, "bn", acc.bn);
      }
      return sum_all(h2);
    };
    SeededRng pick = shapes.substream("pick");
    const GradCheckResult res = grad_check(params, loss, 1e-4, pick, 0);
    CHECK_MESSAGE(res.max_rel_err <= 1e-4,
                  "iter " << it << " worst " << res.worst_param << " err "
                          << res.max_rel_err);
  }
}

TEST_CASE("softmax cross-entropy gradients match central differences") {
  SeededRng shapes(23, "ce-shapes");
  for (int it = 0; it < 100; ++it) {
    const int b = 1 + static_cast<int>(shapes.next_below(3));
    const int k = 2 + static_cast<int>(shapes.next_below(4));
    SeededRng init = shapes.substream(static_cast<uint64_t>(it));
    std::map<std::string, Tensor2> params;
    params["logits"] = random_tensor(b, k, init);
    std::vector<int> targets(b);
    std::vector<double> weights(b);
    for (int i = 0; i < b; ++i) {
      targets[i] = static_cast<int>(init.next_below(static_cast<uint64_t>(k + 1))) - 1;
      weights[i] = 0.25 + init.next_unit();
    }
    // Guarantee at least one scored row so the loss is not identically zero.
    targets[0] = std::max(targets[0], 0);
    auto loss = [&](const std::map<std::string, Tensor2>& p, LayerGrads* g) {
      Tensor2 dlogits(b, k);
      const double l = softmax_cross_entropy(p.at("logits"), targets, weights, &dlogits);
      if (g) grads_accum(*g, "logits", dlogits);
      return l;
    };
    SeededRng pick = shapes.substream("pick");
    const GradCheckResult res = grad_check(params, loss, 1e-4, pick, 0);
    CHECK_MESSAGE(res.max_rel_err <= 1e-4,
                  "iter " << it << " worst " << res.worst_param << " err "
                          << res.max_rel_err);
  }
}

TEST_CASE("embedding_bag_mean scatter-gather round trip matches finite differences") {
  SeededRng rng(24, "bag");
  std::map<std::string, Tensor2> params;
  params["emb"] = random_tensor(6, 3, rng);
  const std::vector<std::vector<int>> bags = {{0, 2, 2}, {5}, {1, 3, 4, 0}};
  auto loss = [&](const std::map<std::string, Tensor2>& p, LayerGrads* g) {
    const Tensor2 pooled = embedding_bag_mean(p.at("emb"), bags);
    if (g) {
      Tensor2 up = Tensor2::full(pooled.rows, pooled.cols, 1.0);
      Tensor2& demb = grads_slot(*g, "emb", 6, 3);
      embedding_bag_mean_backward(up, bags, demb);
    }
    return sum_all(pooled);
  };
  SeededRng pick = rng.substream("pick");
  const GradCheckResult res = grad_check(params, loss, 1e-4, pick, 0);
  CHECK(res.max_rel_err <= 1e-4);
}
