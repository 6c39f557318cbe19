#include "mapo/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mapo/errors.hpp"
#include "mapo/rng.hpp"

namespace mapo {

void ModelConfig::validate() const {
  if (vocab_size == 0 || vocab_size > 256) throw std::invalid_argument("vocab_size must be in [1, 256]");
  if (d_model == 0 || d_model > 64) throw std::invalid_argument("d_model must be in [1, 64]");
  if (n_head == 0 || d_model % n_head != 0) throw std::invalid_argument("d_model must be divisible by n_head");
  if (n_layer == 0 || d_ff == 0) throw std::invalid_argument("n_layer and d_ff must be positive");
  if (context == 0 || context > 64) throw std::invalid_argument("context must be in [1, 64]");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model}, {"n_layer", n_layer},
          {"n_head", n_head},         {"d_ff", d_ff},       {"context", context}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layer = j.at("n_layer").get<std::size_t>();
  c.n_head = j.at("n_head").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.context = j.at("context").get<std::size_t>();
  c.validate();
  return c;
}

ParameterLayout::ParameterLayout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  std::size_t off = 0;
  const auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  wte = take(v * d);
  wpe = take(cfg.context * d);
  for (std::size_t l = 0; l < cfg.n_layer; ++l) {
    Block b{};
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.w_qkv = take(3 * d * d);
    b.b_qkv = take(3 * d);
    b.w_o = take(d * d);
    b.b_o = take(d);
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    b.w_1 = take(f * d);
    b.b_1 = take(f);
    b.w_2 = take(d * f);
    b.b_2 = take(d);
    blocks.push_back(b);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  w_out = take(v * d);
  b_out = take(v);
  head_w = take(d);
  head_b = take(1);
  total = off;
}

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.08;

// out[t, o] = b[o] + sum_i in[t, i] * w[o, i]
void linear_forward(double* out, const double* in, const double* w, const double* b, std::size_t rows,
                    std::size_t in_dim, std::size_t out_dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* x = in + t * in_dim;
    double* y = out + t * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w + o * in_dim;
      double acc = b ? b[o] : 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += x[i] * wr[i];
      y[o] = acc;
    }
  }
}

void linear_backward(double* din, double* dw, double* db, const double* dout, const double* in,
                     const double* w, std::size_t rows, std::size_t in_dim, std::size_t out_dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* g = dout + t * out_dim;
    const double* x = in + t * in_dim;
    double* dx = din ? din + t * in_dim : nullptr;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      const double* wr = w + o * in_dim;
      double* dwr = dw + o * in_dim;
      if (dx) {
        for (std::size_t i = 0; i < in_dim; ++i) dx[i] += go * wr[i];
      }
      for (std::size_t i = 0; i < in_dim; ++i) dwr[i] += go * x[i];
      if (db) db[o] += go;
    }
  }
}

void layernorm_forward(double* out, double* mean, double* rstd, const double* in, const double* g,
                       const double* b, std::size_t rows, std::size_t dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* x = in + t * dim;
    double m = 0.0;
    for (std::size_t i = 0; i < dim; ++i) m += x[i];
    m /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (x[i] - m) * (x[i] - m);
    var /= static_cast<double>(dim);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < dim; ++i) out[t * dim + i] = (x[i] - m) * r * g[i] + b[i];
    mean[t] = m;
    rstd[t] = r;
  }
}

void layernorm_backward(double* din, double* dg, double* db, const double* dout, const double* in,
                        const double* mean, const double* rstd, const double* g, std::size_t rows,
                        std::size_t dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* x = in + t * dim;
    const double* dy = dout + t * dim;
    const double m = mean[t], r = rstd[t];
    double mean_dnorm = 0.0, mean_dnorm_norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double norm = (x[i] - m) * r;
      const double dnorm = dy[i] * g[i];
      mean_dnorm += dnorm;
      mean_dnorm_norm += dnorm * norm;
    }
    mean_dnorm /= static_cast<double>(dim);
    mean_dnorm_norm /= static_cast<double>(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const double norm = (x[i] - m) * r;
      const double dnorm = dy[i] * g[i];
      dg[i] += dy[i] * norm;
      db[i] += dy[i];
      din[t * dim + i] += r * (dnorm - mean_dnorm - norm * mean_dnorm_norm);
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double inner = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(inner);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed)
    : config_(config), layout_(config), params_(layout_.total, 0.0), decay_mask_(layout_.total, false) {
  config_.validate();
  CounterRng rng(seed, 0x7472616eULL);
  const std::size_t d = config_.d_model, f = config_.d_ff, v = config_.vocab_size;
  const double residual_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config_.n_layer));
  const auto fill_normal = [&](std::size_t off, std::size_t n, double std) {
    for (std::size_t i = 0; i < n; ++i) {
      params_[off + i] = std * rng.normal();
      decay_mask_[off + i] = true;
    }
  };
  const auto fill_const = [&](std::size_t off, std::size_t n, double value) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(off), n, value);
  };
  fill_normal(layout_.wte, v * d, kInitStd);
  fill_normal(layout_.wpe, config_.context * d, kInitStd);
  for (const auto& b : layout_.blocks) {
    fill_const(b.ln1_g, d, 1.0);
    fill_normal(b.w_qkv, 3 * d * d, kInitStd);
    fill_normal(b.w_o, d * d, residual_std);
    fill_const(b.ln2_g, d, 1.0);
    fill_normal(b.w_1, f * d, kInitStd);
    fill_normal(b.w_2, d * f, residual_std);
  }
  fill_const(layout_.lnf_g, d, 1.0);
  fill_normal(layout_.w_out, v * d, kInitStd);
}

void Transformer::zero_scalar_head() {
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.head_w), config_.d_model + 1, 0.0);
}

void Transformer::zero_output_head() {
  const std::size_t n = config_.vocab_size * config_.d_model + config_.vocab_size;
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.w_out), n, 0.0);
}

ForwardCache Transformer::forward(std::span<const TokenId> tokens, std::size_t logits_from) const {
  const std::size_t T = tokens.size();
  if (T == 0) throw std::invalid_argument("Transformer::forward: empty input");
  if (T > config_.context) {
    throw ContextOverflowError("sequence of " + std::to_string(T) + " tokens exceeds context window of " +
                               std::to_string(config_.context));
  }
  const std::size_t d = config_.d_model, f = config_.d_ff, V = config_.vocab_size;
  const std::size_t H = config_.n_head, hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* p = params_.data();

  ForwardCache c;
  c.length = T;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.logits_from = std::min(logits_from, T);

  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] >= V) throw std::invalid_argument("token id out of vocabulary range");
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = p[layout_.wte + tokens[t] * d + i] + p[layout_.wpe + t * d + i];
  }

  c.blocks.resize(config_.n_layer);
  for (std::size_t l = 0; l < config_.n_layer; ++l) {
    const auto& L = layout_.blocks[l];
    auto& B = c.blocks[l];
    B.x_in = x;
    B.ln1.resize(T * d);
    B.ln1_mean.resize(T);
    B.ln1_rstd.resize(T);
    layernorm_forward(B.ln1.data(), B.ln1_mean.data(), B.ln1_rstd.data(), x.data(), p + L.ln1_g, p + L.ln1_b, T, d);
    B.qkv.resize(T * 3 * d);
    linear_forward(B.qkv.data(), B.ln1.data(), p + L.w_qkv, p + L.b_qkv, T, d, 3 * d);

    B.att.assign(H * T * T, 0.0);
    B.att_out.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* q = &B.qkv[t * 3 * d + h * hd];
        double* row = &B.att[(h * T + t) * T];
        double mx = -1e300;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* k = &B.qkv[s * 3 * d + d + h * hd];
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[i] * k[i];
          row[s] = dot * scale;
          mx = std::max(mx, row[s]);
        }
        double sum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          row[s] = std::exp(row[s] - mx);
          sum += row[s];
        }
        double* out = &B.att_out[t * d + h * hd];
        for (std::size_t s = 0; s <= t; ++s) {
          row[s] /= sum;
          const double* vv = &B.qkv[s * 3 * d + 2 * d + h * hd];
          for (std::size_t i = 0; i < hd; ++i) out[i] += row[s] * vv[i];
        }
      }
    }
    std::vector<double> proj(T * d);
    linear_forward(proj.data(), B.att_out.data(), p + L.w_o, p + L.b_o, T, d, d);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += proj[i];
    B.x_mid = x;

    B.ln2.resize(T * d);
    B.ln2_mean.resize(T);
    B.ln2_rstd.resize(T);
    layernorm_forward(B.ln2.data(), B.ln2_mean.data(), B.ln2_rstd.data(), x.data(), p + L.ln2_g, p + L.ln2_b, T, d);
    B.h_pre.resize(T * f);
    linear_forward(B.h_pre.data(), B.ln2.data(), p + L.w_1, p + L.b_1, T, d, f);
    B.h_act.resize(T * f);
    for (std::size_t i = 0; i < T * f; ++i) B.h_act[i] = gelu(B.h_pre[i]);
    std::vector<double> mlp(T * d);
    linear_forward(mlp.data(), B.h_act.data(), p + L.w_2, p + L.b_2, T, f, d);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += mlp[i];
  }

  c.x_final = x;
  c.lnf.resize(T * d);
  c.lnf_mean.resize(T);
  c.lnf_rstd.resize(T);
  layernorm_forward(c.lnf.data(), c.lnf_mean.data(), c.lnf_rstd.data(), x.data(), p + layout_.lnf_g,
                    p + layout_.lnf_b, T, d);

  c.logits.assign(T * V, 0.0);
  const std::size_t from = c.logits_from;
  linear_forward(c.logits.data() + from * V, c.lnf.data() + from * d, p + layout_.w_out, p + layout_.b_out,
                 T - from, d, V);
  c.scalars.resize(T);
  linear_forward(c.scalars.data(), c.lnf.data(), p + layout_.head_w, p + layout_.head_b, T, d, 1);
  return c;
}

void Transformer::backward(const ForwardCache& c, std::span<const double> dlogits,
                           std::span<const double> dscalars, std::span<double> grads) const {
  if (grads.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  const std::size_t T = c.length;
  const std::size_t d = config_.d_model, f = config_.d_ff, V = config_.vocab_size;
  const std::size_t H = config_.n_head, hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (!dlogits.empty() && dlogits.size() != T * V) throw std::invalid_argument("dlogits size mismatch");
  if (!dscalars.empty() && dscalars.size() != T) throw std::invalid_argument("dscalars size mismatch");
  const double* p = params_.data();
  double* g = grads.data();

  std::vector<double> dlnf(T * d, 0.0);
  if (!dlogits.empty()) {
    const std::size_t from = c.logits_from;
    linear_backward(dlnf.data() + from * d, g + layout_.w_out, g + layout_.b_out, dlogits.data() + from * V,
                    c.lnf.data() + from * d, p + layout_.w_out, T - from, d, V);
  }
  if (!dscalars.empty()) {
    linear_backward(dlnf.data(), g + layout_.head_w, g + layout_.head_b, dscalars.data(), c.lnf.data(),
                    p + layout_.head_w, T, d, 1);
  }
  std::vector<double> dx(T * d, 0.0);
  layernorm_backward(dx.data(), g + layout_.lnf_g, g + layout_.lnf_b, dlnf.data(), c.x_final.data(),
                     c.lnf_mean.data(), c.lnf_rstd.data(), p + layout_.lnf_g, T, d);

  for (std::size_t l = config_.n_layer; l-- > 0;) {
    const auto& L = layout_.blocks[l];
    const auto& B = c.blocks[l];

    // MLP branch: x_out = x_mid + W2 gelu(W1 ln2(x_mid))
    std::vector<double> dh_act(T * f, 0.0);
    linear_backward(dh_act.data(), g + L.w_2, g + L.b_2, dx.data(), B.h_act.data(), p + L.w_2, T, f, d);
    for (std::size_t i = 0; i < T * f; ++i) dh_act[i] *= gelu_grad(B.h_pre[i]);
    std::vector<double> dln2(T * d, 0.0);
    linear_backward(dln2.data(), g + L.w_1, g + L.b_1, dh_act.data(), B.ln2.data(), p + L.w_1, T, d, f);
    layernorm_backward(dx.data(), g + L.ln2_g, g + L.ln2_b, dln2.data(), B.x_mid.data(), B.ln2_mean.data(),
                       B.ln2_rstd.data(), p + L.ln2_g, T, d);

    // Attention branch: x_mid = x_in + Wo attn(qkv(ln1(x_in)))
    std::vector<double> datt_out(T * d, 0.0);
    linear_backward(datt_out.data(), g + L.w_o, g + L.b_o, dx.data(), B.att_out.data(), p + L.w_o, T, d, d);
    std::vector<double> dqkv(T * 3 * d, 0.0);
    std::vector<double> datt_row(T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* row = &B.att[(h * T + t) * T];
        const double* dout = &datt_out[t * d + h * hd];
        double dot_sum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* vv = &B.qkv[s * 3 * d + 2 * d + h * hd];
          double* dv = &dqkv[s * 3 * d + 2 * d + h * hd];
          double da = 0.0;
          for (std::size_t i = 0; i < hd; ++i) {
            da += dout[i] * vv[i];
            dv[i] += row[s] * dout[i];
          }
          datt_row[s] = da;
          dot_sum += row[s] * da;
        }
        const double* q = &B.qkv[t * 3 * d + h * hd];
        double* dq = &dqkv[t * 3 * d + h * hd];
        for (std::size_t s = 0; s <= t; ++s) {
          const double dpre = row[s] * (datt_row[s] - dot_sum) * scale;
          if (dpre == 0.0) continue;
          const double* k = &B.qkv[s * 3 * d + d + h * hd];
          double* dk = &dqkv[s * 3 * d + d + h * hd];
          for (std::size_t i = 0; i < hd; ++i) {
            dq[i] += dpre * k[i];
            dk[i] += dpre * q[i];
          }
        }
      }
    }
    std::vector<double> dln1(T * d, 0.0);
    linear_backward(dln1.data(), g + L.w_qkv, g + L.b_qkv, dqkv.data(), B.ln1.data(), p + L.w_qkv, T, d, 3 * d);
    layernorm_backward(dx.data(), g + L.ln1_g, g + L.ln1_b, dln1.data(), B.x_in.data(), B.ln1_mean.data(),
                       B.ln1_rstd.data(), p + L.ln1_g, T, d);
  }

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      g[layout_.wte + c.tokens[t] * d + i] += dx[t * d + i];
      g[layout_.wpe + t * d + i] += dx[t * d + i];
    }
  }
}

}  // namespace mapo
