#include "owl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "owl/error.hpp"
#include "owl/parallel.hpp"
#include "owl/rng.hpp"

namespace owl {
namespace {

constexpr Real kLayerNormEps = 1e-5;
constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kHookRowTolerance = 1e-4;

Real gelu(Real x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

Real gelu_grad(Real x) {
  const Real t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

// y = gain * (x - mean) / sqrt(var + eps) + bias. Returns rstd; writes xhat.
Real layer_norm(std::span<const Real> x, const Matrix& gain, const Matrix& bias,
                std::span<Real> xhat, std::span<Real> y) {
  const auto d = static_cast<Real>(x.size());
  Real mean = 0.0;
  for (Real v : x) mean += v;
  mean /= d;
  Real var = 0.0;
  for (Real v : x) var += (v - mean) * (v - mean);
  var /= d;
  const Real rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xhat[i] = (x[i] - mean) * rstd;
    y[i] = gain.data()[i] * xhat[i] + bias.data()[i];
  }
  return rstd;
}

void layer_norm_backward(std::span<const Real> dy, std::span<const Real> xhat, Real rstd,
                         const Matrix& gain, Matrix& dgain, Matrix& dbias,
                         std::span<Real> dx) {
  const std::size_t d = dy.size();
  Real mean_dxhat = 0.0;
  Real mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const Real dxh = dy[i] * gain.data()[i];
    dgain.data()[i] += dy[i] * xhat[i];
    dbias.data()[i] += dy[i];
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[i];
  }
  mean_dxhat /= static_cast<Real>(d);
  mean_dxhat_xhat /= static_cast<Real>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const Real dxh = dy[i] * gain.data()[i];
    dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
}

void add_into(std::span<Real> y, std::span<const Real> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

Real dot(const Real* a, const Real* b, std::size_t n) {
  Real s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void check_token(const ModelConfig& c, int token) {
  require(token >= 0 && static_cast<std::size_t>(token) < c.vocab, ErrorKind::kInvalidArgument,
          "token id " + std::to_string(token) + " outside vocabulary of " +
              std::to_string(c.vocab));
}

// Input row of position `pos`: projected visual feature or token embedding,
// plus the positional embedding.
void embed(const ModelParams& p, const Matrix& features, std::span<const int> tokens,
           std::size_t pos, std::span<Real> out) {
  const auto& c = p.config;
  std::fill(out.begin(), out.end(), 0.0);
  if (pos < c.visual_slots) {
    gemv_acc(features.row(pos), p.projector, out);
    add_into(out, p.projector_bias.row(0));
  } else {
    const int tok = tokens[pos - c.visual_slots];
    check_token(c, tok);
    add_into(out, p.token_embedding.row(static_cast<std::size_t>(tok)));
  }
  add_into(out, p.position_embedding.row(pos));
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, Real scale) {
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = rng.normal() * scale;
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  require(layers >= 1 && heads >= 1 && dim >= 1 && mlp_dim >= 1, ErrorKind::kInvalidArgument,
          "model config: layers, heads, dim, mlp_dim must be positive");
  require(dim % heads == 0, ErrorKind::kInvalidArgument, "model dim must divide by head count");
  require(vocab >= 2, ErrorKind::kInvalidArgument, "vocabulary must have >= 2 tokens");
  require(feature_dim >= 1, ErrorKind::kInvalidArgument, "feature_dim must be positive");
  require(max_seq > visual_slots, ErrorKind::kInvalidArgument,
          "max_seq must exceed the visual prefix length");
}

ModelParams ModelParams::zeros_like(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  p.config = c;
  p.token_embedding = Matrix(c.vocab, c.dim);
  p.position_embedding = Matrix(c.max_seq, c.dim);
  p.projector = Matrix(c.feature_dim, c.dim);
  p.projector_bias = Matrix(1, c.dim);
  p.layers.resize(c.layers);
  for (auto& l : p.layers) {
    l.ln1_gain = Matrix(1, c.dim);
    l.ln1_bias = Matrix(1, c.dim);
    l.wq = Matrix(c.dim, c.dim);
    l.wk = Matrix(c.dim, c.dim);
    l.wv = Matrix(c.dim, c.dim);
    l.wo = Matrix(c.dim, c.dim);
    l.ln2_gain = Matrix(1, c.dim);
    l.ln2_bias = Matrix(1, c.dim);
    l.w1 = Matrix(c.dim, c.mlp_dim);
    l.b1 = Matrix(1, c.mlp_dim);
    l.w2 = Matrix(c.mlp_dim, c.dim);
    l.b2 = Matrix(1, c.dim);
  }
  p.final_gain = Matrix(1, c.dim);
  p.final_bias = Matrix(1, c.dim);
  p.output = Matrix(c.vocab, c.dim);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zeros_like(c);
  Rng rng(seed);
  const Real d = static_cast<Real>(c.dim);
  const Real resid = 1.0 / std::sqrt(2.0 * static_cast<Real>(c.layers));
  p.token_embedding = random_matrix(rng, c.vocab, c.dim, 0.5);
  p.position_embedding = random_matrix(rng, c.max_seq, c.dim, 0.1);
  p.projector = random_matrix(rng, c.feature_dim, c.dim, 1.0 / std::sqrt(static_cast<Real>(c.feature_dim)));
  for (auto& l : p.layers) {
    l.ln1_gain.fill(1.0);
    l.ln2_gain.fill(1.0);
    l.wq = random_matrix(rng, c.dim, c.dim, 1.0 / std::sqrt(d));
    l.wk = random_matrix(rng, c.dim, c.dim, 1.0 / std::sqrt(d));
    l.wv = random_matrix(rng, c.dim, c.dim, 1.0 / std::sqrt(d));
    l.wo = random_matrix(rng, c.dim, c.dim, resid / std::sqrt(d));
    l.w1 = random_matrix(rng, c.dim, c.mlp_dim, 1.0 / std::sqrt(d));
    l.w2 = random_matrix(rng, c.mlp_dim, c.dim,
                         resid / std::sqrt(static_cast<Real>(c.mlp_dim)));
  }
  p.final_gain.fill(1.0);
  p.output = random_matrix(rng, c.vocab, c.dim, 1.0 / std::sqrt(d));
  return p;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  out.emplace_back("position_embedding", &position_embedding);
  out.emplace_back("projector", &projector);
  out.emplace_back("projector_bias", &projector_bias);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1_gain", &l.ln1_gain);
    out.emplace_back(pre + "ln1_bias", &l.ln1_bias);
    out.emplace_back(pre + "wq", &l.wq);
    out.emplace_back(pre + "wk", &l.wk);
    out.emplace_back(pre + "wv", &l.wv);
    out.emplace_back(pre + "wo", &l.wo);
    out.emplace_back(pre + "ln2_gain", &l.ln2_gain);
    out.emplace_back(pre + "ln2_bias", &l.ln2_bias);
    out.emplace_back(pre + "w1", &l.w1);
    out.emplace_back(pre + "b1", &l.b1);
    out.emplace_back(pre + "w2", &l.w2);
    out.emplace_back(pre + "b2", &l.b2);
  }
  out.emplace_back("final_gain", &final_gain);
  out.emplace_back("final_bias", &final_bias);
  out.emplace_back("output", &output);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (auto& [name, m] : std::as_const(*this).named_tensors()) {
    out.emplace_back(name, const_cast<Matrix*>(m));
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : named_tensors()) n += m->size();
  return n;
}

// ---------------------------------------------------------------------------
// Incremental decoding

TokenPartition TokenPartition::for_sequence(std::size_t visual_slots, std::size_t length,
                                            bool self_in_text) {
  require(length >= visual_slots, ErrorKind::kInvalidArgument,
          "sequence shorter than the visual prefix");
  TokenPartition part;
  part.visual.resize(visual_slots);
  std::iota(part.visual.begin(), part.visual.end(), std::size_t{0});
  const std::size_t text_end = (self_in_text || length == visual_slots) ? length : length - 1;
  for (std::size_t i = visual_slots; i < text_end; ++i) part.text.push_back(i);
  return part;
}

void TokenPartition::validate(std::size_t length) const {
  std::vector<char> seen(length, 0);
  for (const auto* set : {&visual, &text}) {
    for (std::size_t idx : *set) {
      require(idx < length, ErrorKind::kInvalidArgument,
              "partition index " + std::to_string(idx) + " >= sequence length " +
                  std::to_string(length));
      require(!seen[idx], ErrorKind::kInvalidArgument,
              "partition index " + std::to_string(idx) + " appears twice");
      seen[idx] = 1;
    }
  }
}

struct StepKernel {
  // Runs position `pos` through every layer. Rows [0, pos) of the caches are
  // read; when `commit` is set, this position's keys/values are stored.
  static std::vector<Real> run(const ModelParams& p, DecodeState& s, std::size_t pos,
                               const AttentionHook* hook,
                               std::vector<AttentionRecord>* records, bool commit) {
    const auto& c = p.config;
    const std::size_t d = c.dim;
    const std::size_t hd = c.head_dim();
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));
    require(pos < c.max_seq, ErrorKind::kInvalidArgument,
            "sequence length exceeds max_seq=" + std::to_string(c.max_seq));

    std::vector<Real> x(d), a(d), xhat(d), q(d), k(d), v(d), ctx(d), tmp(d);
    std::vector<Real> u(c.mlp_dim);
    embed(p, s.features_, s.tokens_, pos, x);

    for (std::size_t li = 0; li < c.layers; ++li) {
      const LayerParams& l = p.layers[li];
      layer_norm(x, l.ln1_gain, l.ln1_bias, xhat, a);
      std::fill(q.begin(), q.end(), 0.0);
      std::fill(k.begin(), k.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      gemv_acc(a, l.wq, q);
      gemv_acc(a, l.wk, k);
      gemv_acc(a, l.wv, v);
      const Matrix& keys = s.keys_[li];
      const Matrix& values = s.values_[li];

      Matrix weights(c.heads, pos + 1);
      for (std::size_t h = 0; h < c.heads; ++h) {
        auto row = weights.row(h);
        for (std::size_t j = 0; j < pos; ++j) {
          row[j] = dot(q.data() + h * hd, keys.data() + j * d + h * hd, hd) * scale;
        }
        row[pos] = dot(q.data() + h * hd, k.data() + h * hd, hd) * scale;
        softmax_inplace(row);
      }
      if (hook != nullptr && hook->rewrite) {
        hook->rewrite(li, weights);
        require(weights.rows() == c.heads && weights.cols() == pos + 1,
                ErrorKind::kDimensionMismatch, "attention hook changed the row shape");
        for (std::size_t h = 0; h < c.heads; ++h) {
          const auto row = weights.row(h);
          for (Real w : row) {
            require(std::isfinite(w), ErrorKind::kNumeric, "attention hook produced a non-finite weight");
          }
          if (!hook->allow_unnormalized) {
            const Real total = sum(row);
            require(std::abs(total - 1.0) <= kHookRowTolerance, ErrorKind::kNumeric,
                    "attention hook returned a row summing to " + std::to_string(total) +
                        " at layer " + std::to_string(li));
          }
        }
      }

      std::fill(ctx.begin(), ctx.end(), 0.0);
      for (std::size_t h = 0; h < c.heads; ++h) {
        const auto row = weights.row(h);
        Real* out = ctx.data() + h * hd;
        for (std::size_t j = 0; j < pos; ++j) {
          const Real w = row[j];
          const Real* vr = values.data() + j * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) out[e] += w * vr[e];
        }
        const Real w = row[pos];
        for (std::size_t e = 0; e < hd; ++e) out[e] += w * v[h * hd + e];
      }
      gemv_acc(ctx, l.wo, x);

      layer_norm(x, l.ln2_gain, l.ln2_bias, xhat, a);
      std::copy(l.b1.data(), l.b1.data() + c.mlp_dim, u.begin());
      gemv_acc(a, l.w1, u);
      for (auto& e : u) e = gelu(e);
      add_into(x, l.b2.row(0));
      gemv_acc(u, l.w2, x);

      if (commit) {
        std::copy(k.begin(), k.end(), s.keys_[li].row(pos).begin());
        std::copy(v.begin(), v.end(), s.values_[li].row(pos).begin());
        s.cached_[li] = pos + 1;
      }
      if (records != nullptr) records->push_back({li, std::move(weights)});
    }

    layer_norm(x, p.final_gain, p.final_bias, xhat, a);
    std::vector<Real> logits(c.vocab, 0.0);
    gemv_t_acc(p.output, a, logits);
    for (Real z : logits) {
      require(std::isfinite(z), ErrorKind::kNumeric, "forward_step produced non-finite logits");
    }
    return logits;
  }
};

DecodeState::DecodeState(const ModelParams& params, Matrix visual_features,
                         std::vector<int> prompt)
    : visual_slots_(params.config.visual_slots), features_(std::move(visual_features)) {
  const auto& c = params.config;
  require(features_.rows() == c.visual_slots && features_.cols() == c.feature_dim,
          ErrorKind::kDimensionMismatch,
          "visual features must be " + std::to_string(c.visual_slots) + "x" +
              std::to_string(c.feature_dim));
  keys_.assign(c.layers, Matrix(c.max_seq, c.dim));
  values_.assign(c.layers, Matrix(c.max_seq, c.dim));
  cached_.assign(c.layers, 0);
  for (std::size_t pos = 0; pos < visual_slots_; ++pos) {
    StepKernel::run(params, *this, pos, nullptr, nullptr, true);
  }
  for (int tok : prompt) push(params, tok);
}

void DecodeState::push(const ModelParams& params, int token) {
  check_token(params.config, token);
  tokens_.push_back(token);
  StepKernel::run(params, *this, length() - 1, nullptr, nullptr, true);
}

TokenPartition DecodeState::partition(bool self_in_text) const {
  return TokenPartition::for_sequence(visual_slots_, length(), self_in_text);
}

StepOutput forward_step(const ModelParams& params, const DecodeState& state,
                        const AttentionHook* hook) {
  require(state.length() > 0, ErrorKind::kInvalidArgument, "forward_step on empty state");
  StepOutput out;
  out.records.reserve(params.config.layers);
  // The kernel only reads the cache when commit is false.
  out.logits = StepKernel::run(params, const_cast<DecodeState&>(state), state.length() - 1,
                               hook, &out.records, false);
  return out;
}

// ---------------------------------------------------------------------------
// Full-sequence forward/backward

namespace {

struct LayerActs {
  Matrix x_in;              // T x d
  Matrix xhat1, a1;         // T x d
  std::vector<Real> rstd1;  // T
  Matrix q, k, v;           // T x d
  std::vector<Matrix> attn; // per head, T x T (lower triangle)
  Matrix ctx;               // T x d
  Matrix xhat2, a2;
  std::vector<Real> rstd2;
  Matrix u, g;              // T x m (pre/post GELU)
};

struct SequenceActs {
  std::size_t length = 0;
  std::vector<LayerActs> layers;
  Matrix x_out;             // T x d, residual stream after the last layer
  Matrix xhatf, f;
  std::vector<Real> rstdf;
};

void forward_sequence(const ModelParams& p, const TrainingExample& ex, SequenceActs& acts) {
  const auto& c = p.config;
  const std::size_t d = c.dim, hd = c.head_dim(), m = c.mlp_dim;
  const std::size_t T = c.visual_slots + ex.input.size();
  require(T <= c.max_seq, ErrorKind::kInvalidArgument,
          "training sequence of length " + std::to_string(T) + " exceeds max_seq");
  require(ex.features.rows() == c.visual_slots && ex.features.cols() == c.feature_dim,
          ErrorKind::kDimensionMismatch, "training example has wrong feature shape");
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));
  acts.length = T;
  acts.layers.resize(c.layers);

  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) embed(p, ex.features, ex.input, t, x.row(t));

  for (std::size_t li = 0; li < c.layers; ++li) {
    const LayerParams& l = p.layers[li];
    LayerActs& A = acts.layers[li];
    A.x_in = x;
    A.xhat1 = Matrix(T, d);
    A.a1 = Matrix(T, d);
    A.rstd1.assign(T, 0.0);
    A.q = Matrix(T, d);
    A.k = Matrix(T, d);
    A.v = Matrix(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      A.rstd1[t] = layer_norm(x.row(t), l.ln1_gain, l.ln1_bias, A.xhat1.row(t), A.a1.row(t));
      gemv_acc(A.a1.row(t), l.wq, A.q.row(t));
      gemv_acc(A.a1.row(t), l.wk, A.k.row(t));
      gemv_acc(A.a1.row(t), l.wv, A.v.row(t));
    }
    A.attn.assign(c.heads, Matrix(T, T));
    A.ctx = Matrix(T, d);
    for (std::size_t h = 0; h < c.heads; ++h) {
      Matrix& W = A.attn[h];
      for (std::size_t t = 0; t < T; ++t) {
        auto row = W.row(t).first(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          row[j] = dot(A.q.data() + t * d + h * hd, A.k.data() + j * d + h * hd, hd) * scale;
        }
        softmax_inplace(row);
        Real* out = A.ctx.data() + t * d + h * hd;
        for (std::size_t j = 0; j <= t; ++j) {
          const Real w = row[j];
          const Real* vr = A.v.data() + j * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) out[e] += w * vr[e];
        }
      }
    }
    A.xhat2 = Matrix(T, d);
    A.a2 = Matrix(T, d);
    A.rstd2.assign(T, 0.0);
    A.u = Matrix(T, m);
    A.g = Matrix(T, m);
    for (std::size_t t = 0; t < T; ++t) {
      gemv_acc(A.ctx.row(t), l.wo, x.row(t));
      A.rstd2[t] = layer_norm(x.row(t), l.ln2_gain, l.ln2_bias, A.xhat2.row(t), A.a2.row(t));
      auto ut = A.u.row(t);
      std::copy(l.b1.data(), l.b1.data() + m, ut.begin());
      gemv_acc(A.a2.row(t), l.w1, ut);
      auto gt = A.g.row(t);
      for (std::size_t e = 0; e < m; ++e) gt[e] = gelu(ut[e]);
      add_into(x.row(t), l.b2.row(0));
      gemv_acc(gt, l.w2, x.row(t));
    }
  }
  acts.x_out = std::move(x);
  acts.xhatf = Matrix(T, d);
  acts.f = Matrix(T, d);
  acts.rstdf.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    acts.rstdf[t] = layer_norm(acts.x_out.row(t), p.final_gain, p.final_bias,
                               acts.xhatf.row(t), acts.f.row(t));
  }
}

// Accumulates d(loss_scale * sum CE)/dparams into `g`. Returns the summed CE.
Real backward_sequence(const ModelParams& p, const TrainingExample& ex,
                       const SequenceActs& acts, Real loss_scale, ModelParams& g) {
  const auto& c = p.config;
  const std::size_t d = c.dim, hd = c.head_dim(), m = c.mlp_dim, V = c.visual_slots;
  const std::size_t T = acts.length;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(hd));

  Real total = 0.0;
  Matrix dx(T, d);
  {
    std::vector<Real> logits(c.vocab), df(d);
    for (std::size_t i = 0; i < ex.input.size(); ++i) {
      const int tgt = ex.target[i];
      if (tgt < 0) continue;
      check_token(c, tgt);
      const std::size_t t = V + i;
      std::fill(logits.begin(), logits.end(), 0.0);
      gemv_t_acc(p.output, acts.f.row(t), logits);
      softmax_inplace(logits);
      total += -std::log(std::max(logits[static_cast<std::size_t>(tgt)], 1e-300));
      logits[static_cast<std::size_t>(tgt)] -= 1.0;
      for (auto& z : logits) z *= loss_scale;
      outer_acc(logits, acts.f.row(t), g.output);
      std::fill(df.begin(), df.end(), 0.0);
      gemv_acc(logits, p.output, df);
      layer_norm_backward(df, acts.xhatf.row(t), acts.rstdf[t], p.final_gain, g.final_gain,
                          g.final_bias, dx.row(t));
    }
  }

  std::vector<Real> dgt(m), dut(m), da(d), dctx_t(d);
  for (std::size_t li = c.layers; li-- > 0;) {
    const LayerParams& l = p.layers[li];
    LayerParams& gl = g.layers[li];
    const LayerActs& A = acts.layers[li];

    // MLP block; dx carries d(residual) and flows through unchanged.
    for (std::size_t t = 0; t < T; ++t) {
      const auto dxt = dx.row(t);
      add_into(gl.b2.row(0), dxt);
      outer_acc(A.g.row(t), dxt, gl.w2);
      std::fill(dgt.begin(), dgt.end(), 0.0);
      gemv_t_acc(l.w2, dxt, dgt);
      const auto ut = A.u.row(t);
      for (std::size_t e = 0; e < m; ++e) dut[e] = dgt[e] * gelu_grad(ut[e]);
      add_into(gl.b1.row(0), dut);
      outer_acc(A.a2.row(t), dut, gl.w1);
      std::fill(da.begin(), da.end(), 0.0);
      gemv_t_acc(l.w1, dut, da);
      layer_norm_backward(da, A.xhat2.row(t), A.rstd2[t], l.ln2_gain, gl.ln2_gain, gl.ln2_bias,
                          dxt);
    }

    // Attention block.
    Matrix dctx(T, d), dq(T, d), dk(T, d), dv(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      outer_acc(A.ctx.row(t), dx.row(t), gl.wo);
      gemv_t_acc(l.wo, dx.row(t), dctx.row(t));
    }
    std::vector<Real> dA(T);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const Matrix& W = A.attn[h];
      for (std::size_t t = 0; t < T; ++t) {
        const Real* dc = dctx.data() + t * d + h * hd;
        const auto row = W.row(t);
        Real weighted = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          dA[j] = dot(dc, A.v.data() + j * d + h * hd, hd);
          weighted += row[j] * dA[j];
          Real* dvr = dv.data() + j * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) dvr[e] += row[j] * dc[e];
        }
        Real* dqr = dq.data() + t * d + h * hd;
        const Real* qr = A.q.data() + t * d + h * hd;
        for (std::size_t j = 0; j <= t; ++j) {
          const Real ds = row[j] * (dA[j] - weighted) * scale;
          if (ds == 0.0) continue;
          const Real* kr = A.k.data() + j * d + h * hd;
          Real* dkr = dk.data() + j * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) {
            dqr[e] += ds * kr[e];
            dkr[e] += ds * qr[e];
          }
        }
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      outer_acc(A.a1.row(t), dq.row(t), gl.wq);
      outer_acc(A.a1.row(t), dk.row(t), gl.wk);
      outer_acc(A.a1.row(t), dv.row(t), gl.wv);
      std::fill(da.begin(), da.end(), 0.0);
      gemv_t_acc(l.wq, dq.row(t), da);
      gemv_t_acc(l.wk, dk.row(t), da);
      gemv_t_acc(l.wv, dv.row(t), da);
      layer_norm_backward(da, A.xhat1.row(t), A.rstd1[t], l.ln1_gain, gl.ln1_gain, gl.ln1_bias,
                          dx.row(t));
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    const auto dxt = dx.row(t);
    add_into(g.position_embedding.row(t), dxt);
    if (t < V) {
      outer_acc(ex.features.row(t), dxt, g.projector);
      add_into(g.projector_bias.row(0), dxt);
    } else {
      add_into(g.token_embedding.row(static_cast<std::size_t>(ex.input[t - V])), dxt);
    }
  }
  return total;
}

void validate_example(const ModelConfig& c, const TrainingExample& ex) {
  require(ex.input.size() == ex.target.size(), ErrorKind::kDimensionMismatch,
          "training example input/target length mismatch");
  for (int tok : ex.input) check_token(c, tok);
  for (int tgt : ex.target) {
    if (tgt >= 0) check_token(c, tgt);
  }
}

void add_params(ModelParams& into, const ModelParams& from) {
  auto dst = into.named_tensors();
  const auto src = from.named_tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto out = dst[i].second->flat();
    const auto in = src[i].second->flat();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += in[j];
  }
}

}  // namespace

Matrix sequence_logits(const ModelParams& params, const TrainingExample& example) {
  validate_example(params.config, example);
  SequenceActs acts;
  forward_sequence(params, example, acts);
  const std::size_t V = params.config.visual_slots;
  Matrix out(example.input.size(), params.config.vocab);
  for (std::size_t i = 0; i < example.input.size(); ++i) {
    gemv_t_acc(params.output, acts.f.row(V + i), out.row(i));
  }
  return out;
}

LossAndGrads loss_and_grads(const ModelParams& params, std::span<const TrainingExample> batch,
                            std::size_t threads) {
  require(!batch.empty(), ErrorKind::kInvalidArgument, "loss_and_grads on an empty batch");
  std::size_t targets = 0;
  for (const auto& ex : batch) {
    validate_example(params.config, ex);
    targets += static_cast<std::size_t>(
        std::count_if(ex.target.begin(), ex.target.end(), [](int t) { return t >= 0; }));
  }
  require(targets > 0, ErrorKind::kInvalidArgument, "batch has no targeted positions");
  const Real loss_scale = 1.0 / static_cast<Real>(targets);

  std::vector<ModelParams> grads(batch.size());
  std::vector<Real> ce(batch.size(), 0.0);
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    grads[i] = ModelParams::zeros_like(params.config);
    SequenceActs acts;
    forward_sequence(params, batch[i], acts);
    ce[i] = backward_sequence(params, batch[i], acts, loss_scale, grads[i]);
  });

  LossAndGrads out;
  out.targets = targets;
  out.grads = std::move(grads[0]);
  Real total = ce[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    add_params(out.grads, grads[i]);
    total += ce[i];
  }
  out.loss = total * loss_scale;
  return out;
}

TrainResult train(ModelParams params, std::span<const TrainingExample> corpus,
                  const TrainOptions& options) {
  require(!corpus.empty(), ErrorKind::kInvalidArgument, "train on an empty corpus");
  require(options.batch_size >= 1, ErrorKind::kInvalidArgument, "batch size must be >= 1");
  TrainResult result;
  Rng rng(options.seed);

  constexpr Real kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ModelParams m1 = ModelParams::zeros_like(params.config);
  ModelParams m2 = ModelParams::zeros_like(params.config);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  const std::size_t steps_per_epoch = (corpus.size() + options.batch_size - 1) / options.batch_size;
  const std::size_t total_steps = steps_per_epoch * options.epochs;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<TrainingExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
      LossAndGrads lg = loss_and_grads(params, batch, options.threads);
      if (!std::isfinite(lg.loss)) {
        fail(ErrorKind::kNumeric, "training loss became non-finite at step " + std::to_string(step));
      }

      Real norm2 = 0.0;
      for (const auto& [name, t] : lg.grads.named_tensors()) {
        for (Real v : t->flat()) norm2 += v * v;
      }
      const Real norm = std::sqrt(norm2);
      const Real clip = (options.grad_clip > 0.0 && norm > options.grad_clip)
                            ? options.grad_clip / norm
                            : 1.0;
      // Cosine decay to 10% of the base rate.
      const Real progress = total_steps > 1 ? static_cast<Real>(step) / static_cast<Real>(total_steps - 1) : 0.0;
      const Real lr = options.learning_rate * (0.55 + 0.45 * std::cos(3.141592653589793 * progress));
      ++step;
      const Real bc1 = 1.0 - std::pow(kBeta1, static_cast<Real>(step));
      const Real bc2 = 1.0 - std::pow(kBeta2, static_cast<Real>(step));

      auto pt = params.named_tensors();
      auto gt = lg.grads.named_tensors();
      auto mt = m1.named_tensors();
      auto vt = m2.named_tensors();
      for (std::size_t ti = 0; ti < pt.size(); ++ti) {
        auto pw = pt[ti].second->flat();
        const auto gw = gt[ti].second->flat();
        auto mw = mt[ti].second->flat();
        auto vw = vt[ti].second->flat();
        for (std::size_t j = 0; j < pw.size(); ++j) {
          const Real gj = gw[j] * clip;
          mw[j] = kBeta1 * mw[j] + (1.0 - kBeta1) * gj;
          vw[j] = kBeta2 * vw[j] + (1.0 - kBeta2) * gj * gj;
          pw[j] -= lr * (mw[j] / bc1) / (std::sqrt(vw[j] / bc2) + kEps);
        }
      }
      result.loss_trace.push_back(lg.loss);
      if (options.on_step) options.on_step(step - 1, lg.loss);
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace owl
