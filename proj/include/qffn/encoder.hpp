#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "qffn/error.hpp"
#include "qffn/qffn_block.hpp"
#include "qffn/tensor.hpp"

namespace qffn {

enum class FfnKind { Classical, Qffn, VanillaQffn };

inline const char* to_string(FfnKind k) {
  switch (k) {
    case FfnKind::Classical: return "Classical";
    case FfnKind::Qffn: return "Qffn";
    case FfnKind::VanillaQffn: return "VanillaQffn";
  }
  return "?";
}

inline std::optional<FfnKind> parse_ffn_kind(const std::string& s) {
  if (s == "Classical") return FfnKind::Classical;
  if (s == "Qffn") return FfnKind::Qffn;
  if (s == "VanillaQffn") return FfnKind::VanillaQffn;
  return std::nullopt;
}

/// Defaults are the bert-tiny shape: 2 layers, hidden 128, 2 heads, inner 512.
struct ModelConfig {
  std::size_t vocab_size = 30522;
  std::size_t hidden = 128;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t intermediate = 512;
  std::size_t max_seq_len = 128;
  FfnKind ffn_kind = FfnKind::Classical;
  int pqc_layers = 1;  // 1, 2, 4 or 8 under strict_depths
  std::size_t num_classes = 2;
  double dropout = 0.0;

  PqcConfig pqc_config() const {
    return {ffn_kind == FfnKind::VanillaQffn ? Variant::Vanilla : Variant::Optimized,
            pqc_layers, 4};
  }
};

inline void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string(field) + " must be positive");
  };
  positive(c.vocab_size, "vocab_size");
  positive(c.hidden, "hidden");
  positive(c.num_layers, "num_layers");
  positive(c.num_heads, "num_heads");
  positive(c.intermediate, "intermediate");
  positive(c.max_seq_len, "max_seq_len");
  if (c.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (c.hidden % c.num_heads != 0) {
    throw ConfigError("hidden (" + std::to_string(c.hidden) +
                      ") must be divisible by num_heads (" + std::to_string(c.num_heads) + ")");
  }
  if (c.ffn_kind != FfnKind::Classical && c.pqc_layers < 1) {
    throw ConfigError("pqc_layers must be >= 1, got " + std::to_string(c.pqc_layers));
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

struct ClassicalFfn {
  Matrix w1;  // [inner × hidden]
  Matrix b1;
  Matrix w2;  // [hidden × inner]
  Matrix b2;
};

struct EncoderLayer {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gamma, ln1_beta;
  std::variant<ClassicalFfn, QffnBlock> ffn;
  Matrix ln2_gamma, ln2_beta;
};

/// Post-LN BERT-style encoder with a linear head on the final [CLS] row.
/// The same type doubles as the gradient container.
struct EncoderModel {
  ModelConfig config;
  Matrix token_embedding;     // [vocab × hidden]
  Matrix position_embedding;  // [max_seq_len × hidden]
  Matrix emb_ln_gamma, emb_ln_beta;
  std::vector<EncoderLayer> layers;
  Matrix classifier_w;  // [classes × hidden]
  Matrix classifier_b;
};

/// Visits every trainable tensor in a fixed order with a stable name.
template <class Model, class Fn>
  requires std::is_same_v<std::remove_const_t<Model>, EncoderModel>
void for_each_tensor(Model& m, Fn&& fn) {
  fn("embeddings.token", m.token_embedding);
  fn("embeddings.position", m.position_embedding);
  fn("embeddings.ln.gamma", m.emb_ln_gamma);
  fn("embeddings.ln.beta", m.emb_ln_beta);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "attention.query.weight", layer.wq);
    fn(p + "attention.query.bias", layer.bq);
    fn(p + "attention.key.weight", layer.wk);
    fn(p + "attention.key.bias", layer.bk);
    fn(p + "attention.value.weight", layer.wv);
    fn(p + "attention.value.bias", layer.bv);
    fn(p + "attention.output.weight", layer.wo);
    fn(p + "attention.output.bias", layer.bo);
    fn(p + "ln1.gamma", layer.ln1_gamma);
    fn(p + "ln1.beta", layer.ln1_beta);
    if (auto* ffn = std::get_if<ClassicalFfn>(&layer.ffn)) {
      fn(p + "ffn.inner.weight", ffn->w1);
      fn(p + "ffn.inner.bias", ffn->b1);
      fn(p + "ffn.outer.weight", ffn->w2);
      fn(p + "ffn.outer.bias", ffn->b2);
    } else {
      auto& q = std::get<QffnBlock>(layer.ffn);
      fn(p + "qffn.down.weight", q.w_in);
      fn(p + "qffn.down.bias", q.b_in);
      fn(p + "qffn.up.weight", q.w_out);
      fn(p + "qffn.up.bias", q.b_out);
      fn(p + "qffn.theta", q.theta);
    }
    fn(p + "ln2.gamma", layer.ln2_gamma);
    fn(p + "ln2.beta", layer.ln2_beta);
  }
  fn("classifier.weight", m.classifier_w);
  fn("classifier.bias", m.classifier_b);
}

/// Model with correctly shaped tensors, all zero (layer-norm scales included).
inline EncoderModel make_zero_model(const ModelConfig& c) {
  validate(c);
  const std::size_t h = c.hidden;
  EncoderModel m;
  m.config = c;
  m.token_embedding = Matrix(c.vocab_size, h);
  m.position_embedding = Matrix(c.max_seq_len, h);
  m.emb_ln_gamma = Matrix(1, h);
  m.emb_ln_beta = Matrix(1, h);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    EncoderLayer layer{Matrix(h, h), Matrix(1, h), Matrix(h, h), Matrix(1, h),
                       Matrix(h, h), Matrix(1, h), Matrix(h, h), Matrix(1, h),
                       Matrix(1, h), Matrix(1, h), ClassicalFfn{}, Matrix(1, h), Matrix(1, h)};
    if (c.ffn_kind == FfnKind::Classical) {
      layer.ffn = ClassicalFfn{Matrix(c.intermediate, h), Matrix(1, c.intermediate),
                               Matrix(h, c.intermediate), Matrix(1, h)};
    } else {
      layer.ffn = make_qffn_block(h, c.pqc_config(), c.ffn_kind == FfnKind::Qffn);
    }
    m.layers.push_back(std::move(layer));
  }
  m.classifier_w = Matrix(c.num_classes, h);
  m.classifier_b = Matrix(1, c.num_classes);
  return m;
}

/// Weights ~ N(0, 0.02²), biases 0, layer-norm γ = 1 and β = 0,
/// PQC angles ~ U(−π, π).
inline EncoderModel init_model(const ModelConfig& c, std::uint64_t seed) {
  EncoderModel m = make_zero_model(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  auto normal = [&](Matrix& t) {
    for (auto& v : t.flat()) v = gauss(rng);
  };
  normal(m.token_embedding);
  normal(m.position_embedding);
  m.emb_ln_gamma.fill(1.0);
  for (auto& layer : m.layers) {
    normal(layer.wq);
    normal(layer.wk);
    normal(layer.wv);
    normal(layer.wo);
    layer.ln1_gamma.fill(1.0);
    layer.ln2_gamma.fill(1.0);
    if (auto* ffn = std::get_if<ClassicalFfn>(&layer.ffn)) {
      normal(ffn->w1);
      normal(ffn->w2);
    } else {
      auto& q = std::get<QffnBlock>(layer.ffn);
      q = init_qffn_block(c.hidden, q.pqc, q.residual, rng);
    }
  }
  normal(m.classifier_w);
  return m;
}

inline EncoderModel zeros_like(const EncoderModel& m) {
  EncoderModel z = m;
  for_each_tensor(z, [](const std::string&, Matrix& t) { t.fill(0.0); });
  return z;
}

/// Closed-form trainable parameter count.
inline std::size_t model_param_count(const ModelConfig& c) {
  validate(c);
  const std::size_t h = c.hidden;
  const std::size_t attention = 4 * (h * h + h);
  const std::size_t norms = 2 * (2 * h);
  std::size_t ffn = 0;
  if (c.ffn_kind == FfnKind::Classical) {
    ffn = classical_ffn_param_count(h, c.intermediate);
  } else {
    const std::size_t q = 4;
    ffn = q * h + q + h * q + h + pqc_param_count(c.pqc_config());
  }
  return c.vocab_size * h + c.max_seq_len * h + 2 * h + c.num_layers * (attention + norms + ffn) +
         c.num_classes * h + c.num_classes;
}

inline std::size_t count_parameters(const EncoderModel& m) {
  std::size_t n = 0;
  for_each_tensor(m, [&](const std::string&, const Matrix& t) { n += t.size(); });
  return n;
}

/// Token ids and attention mask, row-major [batch × seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;
  std::vector<int> mask;

  std::span<const int> ids_row(std::size_t b) const { return {ids.data() + b * seq, seq}; }
  std::span<const int> mask_row(std::size_t b) const { return {mask.data() + b * seq, seq}; }
};

inline constexpr double kLayerNormEps = 1e-12;

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                         LayerNormCache* cache = nullptr) {
  const std::size_t n = x.cols();
  Matrix y(x.rows(), n);
  Matrix xhat(x.rows(), n);
  std::vector<double> inv(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xr[c] - mean) * inv[r];
      y(r, c) = gamma(0, c) * xhat(r, c) + beta(0, c);
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv)};
  return y;
}

inline Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gamma,
                                  const Matrix& dy, Matrix& dgamma, Matrix& dbeta) {
  const std::size_t n = dy.cols();
  Matrix dx(dy.rows(), n);
  std::vector<double> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double sum = 0.0;
    double sum_xhat = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      dgamma(0, c) += dy(r, c) * cache.xhat(r, c);
      dbeta(0, c) += dy(r, c);
      dxhat[c] = dy(r, c) * gamma(0, c);
      sum += dxhat[c];
      sum_xhat += dxhat[c] * cache.xhat(r, c);
    }
    const double scale = cache.inv_std[r] / static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
      dx(r, c) = scale * (static_cast<double>(n) * dxhat[c] - sum - cache.xhat(r, c) * sum_xhat);
    }
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // one [len × len] matrix per head
  Matrix context;
  Matrix attn_drop_mask;
  LayerNormCache ln1;
  Matrix h1;
  Matrix inner_pre;  // classical only
  Matrix inner_act;
  Matrix ffn_drop_mask;
  LayerNormCache ln2;
};

/// Everything the backward pass needs for one sequence.
struct SequenceCache {
  std::vector<int> ids;
  std::vector<int> mask;
  std::size_t len = 0;
  Matrix emb_drop_mask;
  LayerNormCache emb_ln;
  std::vector<LayerCache> layers;
  Matrix final_hidden;
  std::vector<double> logits;
};

namespace detail {

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  Matrix m(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& v : m.flat()) v = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return m;
}

inline void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() == 0) return;
  for (std::size_t i = 0; i < x.size(); ++i) x.flat()[i] *= mask.flat()[i];
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.flat()[i] += b.flat()[i];
  return c;
}

inline void check_sequence(const ModelConfig& c, std::span<const int> ids,
                           std::span<const int> mask) {
  if (ids.size() != mask.size()) throw ShapeError("ids and mask lengths differ");
  if (ids.empty()) throw ShapeError("empty sequence");
  if (ids.size() > c.max_seq_len) {
    throw ShapeError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                     std::to_string(c.max_seq_len));
  }
  if (mask[0] == 0) throw ShapeError("position 0 ([CLS]) must be unmasked");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    }
  }
}

// Per-head scaled dot-product attention; masked keys get exactly zero weight.
inline Matrix attention(const ModelConfig& c, const Matrix& q, const Matrix& k, const Matrix& v,
                        std::span<const int> mask, std::vector<Matrix>& probs) {
  const std::size_t len = q.rows();
  const std::size_t dh = c.hidden / c.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix context(len, c.hidden);
  probs.assign(c.num_heads, Matrix(len, len));
  for (std::size_t head = 0; head < c.num_heads; ++head) {
    const std::size_t off = head * dh;
    Matrix& p = probs[head];
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        if (!mask[j]) continue;
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q(i, off + d) * k(j, off + d);
        p(i, j) = s * scale;
        mx = std::max(mx, p(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        if (!mask[j]) {
          p(i, j) = 0.0;
          continue;
        }
        p(i, j) = std::exp(p(i, j) - mx);
        z += p(i, j);
      }
      for (std::size_t j = 0; j < len; ++j) p(i, j) /= z;
      for (std::size_t j = 0; j < len; ++j) {
        const double w = p(i, j);
        if (w == 0.0) continue;
        for (std::size_t d = 0; d < dh; ++d) context(i, off + d) += w * v(j, off + d);
      }
    }
  }
  return context;
}

}  // namespace detail

/// Forward pass over one sequence. Trailing masked positions are dropped
/// before compute; they cannot influence the [CLS] row. Pass an RNG to enable
/// dropout (training mode).
inline SequenceCache forward_sequence(const EncoderModel& m, std::span<const int> ids,
                                      std::span<const int> mask,
                                      std::mt19937_64* dropout_rng = nullptr) {
  const ModelConfig& c = m.config;
  detail::check_sequence(c, ids, mask);
  SequenceCache cache;
  std::size_t len = ids.size();
  while (len > 1 && mask[len - 1] == 0) --len;
  cache.len = len;
  cache.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(len));
  cache.mask.assign(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(len));

  Matrix x(len, c.hidden);
  for (std::size_t t = 0; t < len; ++t) {
    const auto tok = m.token_embedding.row(static_cast<std::size_t>(cache.ids[t]));
    const auto pos = m.position_embedding.row(t);
    for (std::size_t d = 0; d < c.hidden; ++d) x(t, d) = tok[d] + pos[d];
  }
  Matrix h = layer_norm(x, m.emb_ln_gamma, m.emb_ln_beta, &cache.emb_ln);
  cache.emb_drop_mask = detail::dropout_mask(len, c.hidden, c.dropout, dropout_rng);
  detail::apply_mask(h, cache.emb_drop_mask);

  for (const auto& layer : m.layers) {
    LayerCache lc;
    lc.input = h;
    lc.q = linear(h, layer.wq, layer.bq);
    lc.k = linear(h, layer.wk, layer.bk);
    lc.v = linear(h, layer.wv, layer.bv);
    lc.context = detail::attention(c, lc.q, lc.k, lc.v, cache.mask, lc.probs);
    Matrix attn = linear(lc.context, layer.wo, layer.bo);
    lc.attn_drop_mask = detail::dropout_mask(len, c.hidden, c.dropout, dropout_rng);
    detail::apply_mask(attn, lc.attn_drop_mask);
    lc.h1 = layer_norm(detail::add(h, attn), layer.ln1_gamma, layer.ln1_beta, &lc.ln1);

    Matrix ffn_out;
    if (const auto* ffn = std::get_if<ClassicalFfn>(&layer.ffn)) {
      lc.inner_pre = linear(lc.h1, ffn->w1, ffn->b1);
      lc.inner_act = lc.inner_pre;
      for (auto& v : lc.inner_act.flat()) v = gelu(v);
      ffn_out = linear(lc.inner_act, ffn->w2, ffn->b2);
    } else {
      ffn_out = qffn_forward(std::get<QffnBlock>(layer.ffn), lc.h1, 0);
    }
    lc.ffn_drop_mask = detail::dropout_mask(len, c.hidden, c.dropout, dropout_rng);
    detail::apply_mask(ffn_out, lc.ffn_drop_mask);
    h = layer_norm(detail::add(lc.h1, ffn_out), layer.ln2_gamma, layer.ln2_beta, &lc.ln2);
    cache.layers.push_back(std::move(lc));
  }
  cache.final_hidden = h;

  cache.logits.resize(c.num_classes);
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    double acc = m.classifier_b(0, k);
    for (std::size_t d = 0; d < c.hidden; ++d) acc += m.classifier_w(k, d) * h(0, d);
    cache.logits[k] = acc;
  }
  return cache;
}

/// Accumulates gradients of the scalar whose logit-gradient is `dlogits` into
/// `grads` (a model-shaped accumulator).
inline void backward_sequence(const EncoderModel& m, const SequenceCache& cache,
                              std::span<const double> dlogits, EncoderModel& grads) {
  const ModelConfig& c = m.config;
  const std::size_t len = cache.len;
  const std::size_t dh = c.hidden / c.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix grad_h(len, c.hidden);
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    grads.classifier_b(0, k) += dlogits[k];
    for (std::size_t d = 0; d < c.hidden; ++d) {
      grads.classifier_w(k, d) += dlogits[k] * cache.final_hidden(0, d);
      grad_h(0, d) += dlogits[k] * m.classifier_w(k, d);
    }
  }

  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& layer = m.layers[li];
    auto& gl = grads.layers[li];
    const auto& lc = cache.layers[li];

    // h2 = LN2(h1 + ffn(h1))
    Matrix dsum = layer_norm_backward(lc.ln2, layer.ln2_gamma, grad_h, gl.ln2_gamma, gl.ln2_beta);
    Matrix dffn_out = dsum;
    detail::apply_mask(dffn_out, lc.ffn_drop_mask);
    Matrix dh1 = dsum;
    if (const auto* ffn = std::get_if<ClassicalFfn>(&layer.ffn)) {
      auto& gf = std::get<ClassicalFfn>(gl.ffn);
      Matrix dact = linear_backward(lc.inner_act, ffn->w2, dffn_out, gf.w2, gf.b2);
      for (std::size_t i = 0; i < dact.size(); ++i) {
        dact.flat()[i] *= gelu_grad(lc.inner_pre.flat()[i]);
      }
      Matrix dx = linear_backward(lc.h1, ffn->w1, dact, gf.w1, gf.b1);
      dh1 = detail::add(dh1, dx);
    } else {
      const auto& block = std::get<QffnBlock>(layer.ffn);
      auto& gq = std::get<QffnBlock>(gl.ffn);
      auto qg = qffn_backward(block, lc.h1, 0, dffn_out);
      auto accumulate = [](Matrix& dst, const Matrix& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.flat()[i] += src.flat()[i];
      };
      accumulate(gq.w_in, qg.w_in);
      accumulate(gq.b_in, qg.b_in);
      accumulate(gq.w_out, qg.w_out);
      accumulate(gq.b_out, qg.b_out);
      accumulate(gq.theta, qg.theta);
      dh1 = detail::add(dh1, qg.input);
    }

    // h1 = LN1(input + attn(input))
    Matrix dsum1 = layer_norm_backward(lc.ln1, layer.ln1_gamma, dh1, gl.ln1_gamma, gl.ln1_beta);
    Matrix dattn = dsum1;
    detail::apply_mask(dattn, lc.attn_drop_mask);
    Matrix dcontext = linear_backward(lc.context, layer.wo, dattn, gl.wo, gl.bo);

    Matrix dq(len, c.hidden), dk(len, c.hidden), dv(len, c.hidden);
    std::vector<double> dp(len);
    for (std::size_t head = 0; head < c.num_heads; ++head) {
      const std::size_t off = head * dh;
      const Matrix& p = lc.probs[head];
      for (std::size_t i = 0; i < len; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          double g = 0.0;
          for (std::size_t d = 0; d < dh; ++d) g += dcontext(i, off + d) * lc.v(j, off + d);
          dp[j] = g;
          dot += g * p(i, j);
          if (p(i, j) != 0.0) {
            for (std::size_t d = 0; d < dh; ++d) dv(j, off + d) += p(i, j) * dcontext(i, off + d);
          }
        }
        for (std::size_t j = 0; j < len; ++j) {
          const double ds = p(i, j) * (dp[j] - dot) * scale;
          if (ds == 0.0) continue;
          for (std::size_t d = 0; d < dh; ++d) {
            dq(i, off + d) += ds * lc.k(j, off + d);
            dk(j, off + d) += ds * lc.q(i, off + d);
          }
        }
      }
    }
    Matrix dinput = dsum1;
    dinput = detail::add(dinput, linear_backward(lc.input, layer.wq, dq, gl.wq, gl.bq));
    dinput = detail::add(dinput, linear_backward(lc.input, layer.wk, dk, gl.wk, gl.bk));
    dinput = detail::add(dinput, linear_backward(lc.input, layer.wv, dv, gl.wv, gl.bv));
    grad_h = std::move(dinput);
  }

  detail::apply_mask(grad_h, cache.emb_drop_mask);
  Matrix dx = layer_norm_backward(cache.emb_ln, m.emb_ln_gamma, grad_h, grads.emb_ln_gamma,
                                  grads.emb_ln_beta);
  for (std::size_t t = 0; t < len; ++t) {
    auto tok = grads.token_embedding.row(static_cast<std::size_t>(cache.ids[t]));
    auto pos = grads.position_embedding.row(t);
    for (std::size_t d = 0; d < c.hidden; ++d) {
      tok[d] += dx(t, d);
      pos[d] += dx(t, d);
    }
  }
}

inline void check_batch(const TokenBatch& batch) {
  if (batch.ids.size() != batch.batch * batch.seq || batch.mask.size() != batch.ids.size()) {
    throw ShapeError("token batch storage does not match batch x seq");
  }
}

/// Logits [batch × num_classes] in inference mode (no dropout).
inline Matrix model_forward(const EncoderModel& m, const TokenBatch& batch) {
  check_batch(batch);
  Matrix logits(batch.batch, m.config.num_classes);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const auto cache = forward_sequence(m, batch.ids_row(b), batch.mask_row(b));
    std::copy(cache.logits.begin(), cache.logits.end(), logits.row(b).begin());
  }
  return logits;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

/// −log softmax(logits)[label], computed stably.
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) + mx - logits[label];
}

struct LossAndGrads {
  double loss = 0.0;  // mean cross-entropy over the batch
  Matrix logits;
  EncoderModel grads;
};

/// Mean cross-entropy over the batch and its gradient for every tensor.
inline LossAndGrads model_backward(const EncoderModel& m, const TokenBatch& batch,
                                   std::span<const int> labels,
                                   std::mt19937_64* dropout_rng = nullptr) {
  check_batch(batch);
  if (labels.size() != batch.batch) throw ShapeError("labels length does not match batch");
  LossAndGrads out{0.0, Matrix(batch.batch, m.config.num_classes), zeros_like(m)};
  const double inv_b = 1.0 / static_cast<double>(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= m.config.num_classes) {
      throw ShapeError("label " + std::to_string(label) + " outside [0, num_classes)");
    }
    const auto cache = forward_sequence(m, batch.ids_row(b), batch.mask_row(b), dropout_rng);
    std::copy(cache.logits.begin(), cache.logits.end(), out.logits.row(b).begin());
    out.loss += cross_entropy(cache.logits, static_cast<std::size_t>(label)) * inv_b;
    auto dlogits = softmax(cache.logits);
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    for (auto& g : dlogits) g *= inv_b;
    backward_sequence(m, cache, dlogits, out.grads);
  }
  return out;
}

}  // namespace qffn
