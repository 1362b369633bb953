#include "misdetect/encoder.hpp"

#include <cmath>
#include <numbers>

#include "misdetect/error.hpp"
#include "misdetect/rng.hpp"

namespace misdetect {

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecial)) throw Error("vocab_size must exceed 5", "vocab_size");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw Error("d_model must be a positive multiple of n_heads", "d_model");
  }
  if (n_layers == 0) throw Error("n_layers must be positive", "n_layers");
  if (d_ff == 0) throw Error("d_ff must be positive", "d_ff");
  if (max_positions < 4) throw Error("max_positions must be >= 4", "max_positions");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must lie in [0, 1)", "dropout_rate");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},   {"n_heads", n_heads},
          {"n_layers", n_layers},     {"d_ff", d_ff},         {"max_positions", max_positions},
          {"dropout_rate", dropout_rate}, {"n_classes", n_classes}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  if (j.contains("n_classes") && j["n_classes"] != n_classes) throw Error("n_classes must be 2", "n_classes");
  return c;
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  const double z = e0 + e1;
  return {e0 / z, e1 / z};
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
EncoderParameters<T> EncoderParameters<T>::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto ff = static_cast<Eigen::Index>(cfg.d_ff);
  const auto vocab = static_cast<Eigen::Index>(cfg.vocab_size);
  EncoderParameters p;
  p.config = cfg;
  p.token_embedding = Mat<T>::Zero(vocab, d);
  p.position_embedding = Mat<T>::Zero(static_cast<Eigen::Index>(cfg.max_positions), d);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    for (auto* w : {&l.query_w, &l.key_w, &l.value_w, &l.out_w}) *w = Mat<T>::Zero(d, d);
    for (auto* b : {&l.query_b, &l.value_b, &l.out_b, &l.ln1_gain, &l.ln1_bias, &l.ff2_b,
                    &l.ln2_gain, &l.ln2_bias}) {
      *b = Mat<T>::Zero(1, d);
    }
    l.ff1_w = Mat<T>::Zero(d, ff);
    l.ff1_b = Mat<T>::Zero(1, ff);
    l.ff2_w = Mat<T>::Zero(ff, d);
  }
  p.classifier_w = Mat<T>::Zero(d, 2);
  p.classifier_b = Mat<T>::Zero(1, 2);
  p.mlm_w = Mat<T>::Zero(d, vocab);
  p.mlm_b = Mat<T>::Zero(1, vocab);
  return p;
}

template <typename T>
EncoderParameters<T> EncoderParameters<T>::initialize(const EncoderConfig& cfg, std::uint64_t seed) {
  auto p = zeros(cfg);
  SplitMix64 rng(seed);
  p.for_each([&](const std::string& name, Mat<T>& m, bool decay) {
    if (name.find("ln") != std::string::npos && name.ends_with(".gain")) {
      m.setOnes();
    } else if (decay) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(0.02 * rng.normal());
    }
  });
  return p;
}

template <typename T>
void EncoderParameters<T>::for_each(const std::function<void(const std::string&, Mat<T>&, bool)>& fn) {
  fn("embeddings.token", token_embedding, true);
  fn("embeddings.position", position_embedding, true);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    fn(pre + "attn.query.weight", l.query_w, true);
    fn(pre + "attn.query.bias", l.query_b, false);
    fn(pre + "attn.key.weight", l.key_w, true);
    fn(pre + "attn.value.weight", l.value_w, true);
    fn(pre + "attn.value.bias", l.value_b, false);
    fn(pre + "attn.out.weight", l.out_w, true);
    fn(pre + "attn.out.bias", l.out_b, false);
    fn(pre + "ln1.gain", l.ln1_gain, false);
    fn(pre + "ln1.bias", l.ln1_bias, false);
    fn(pre + "ff1.weight", l.ff1_w, true);
    fn(pre + "ff1.bias", l.ff1_b, false);
    fn(pre + "ff2.weight", l.ff2_w, true);
    fn(pre + "ff2.bias", l.ff2_b, false);
    fn(pre + "ln2.gain", l.ln2_gain, false);
    fn(pre + "ln2.bias", l.ln2_bias, false);
  }
  fn("classifier.weight", classifier_w, true);
  fn("classifier.bias", classifier_b, false);
  fn("mlm.weight", mlm_w, true);
  fn("mlm.bias", mlm_b, false);
}

template <typename T>
void EncoderParameters<T>::for_each(
    const std::function<void(const std::string&, const Mat<T>&, bool)>& fn) const {
  const_cast<EncoderParameters*>(this)->for_each(
      [&](const std::string& name, Mat<T>& m, bool decay) { fn(name, m, decay); });
}

template <typename T>
void EncoderParameters<T>::set_zero() {
  for_each([](const std::string&, Mat<T>& m, bool) { m.setZero(); });
}

template <typename T>
std::size_t EncoderParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat<T>& m, bool) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
bool EncoderParameters<T>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat<T>& m, bool) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename T>
template <typename U>
EncoderParameters<U> EncoderParameters<T>::cast() const {
  auto out = EncoderParameters<U>::zeros(config);
  std::vector<const Mat<T>*> src;
  for_each([&](const std::string&, const Mat<T>& m, bool) { src.push_back(&m); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, Mat<U>& m, bool) { m = src[i++]->template cast<U>(); });
  return out;
}

template struct EncoderParameters<float>;
template struct EncoderParameters<double>;
template EncoderParameters<double> EncoderParameters<float>::cast<double>() const;
template EncoderParameters<float> EncoderParameters<double>::cast<float>() const;
template EncoderParameters<float> EncoderParameters<float>::cast<float>() const;
template EncoderParameters<double> EncoderParameters<double>::cast<double>() const;

template <typename T>
Mat<T> ForwardCache<T>::attention_matrix(std::size_t layer, std::size_t head) const {
  const auto& a = layers.at(layer).attention.at(head);
  Mat<T> full = Mat<T>::Zero(a.rows(), a.rows());
  full.leftCols(a.cols()) = a;
  return full;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

constexpr double kLayerNormEps = 1e-12;

enum DropoutSite : std::uint64_t { kSiteEmbedding = 1, kSiteAttention = 2, kSiteFeedForward = 3 };

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, const ForwardOptions& opt, double rate,
                    DropoutSite site, std::size_t layer) {
  if (!opt.train || rate <= 0.0) return {};
  Mat<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::uint64_t row_key = hash_keys({opt.seed, site, layer, static_cast<std::uint64_t>(r)});
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double u = static_cast<double>(mix64(row_key + static_cast<std::uint64_t>(c)) >> 11) * 0x1.0p-53;
      mask(r, c) = u >= rate ? keep_scale : T(0);
    }
  }
  return mask;
}

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& hat,
                Eigen::Matrix<T, Eigen::Dynamic, 1>& inv_std, Mat<T>& out) {
  const auto n = x.rows();
  const auto d = static_cast<T>(x.cols());
  hat.resize(x.rows(), x.cols());
  inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).sum() / d;
    const T var = (x.row(r).array() - mean).square().sum() / d;
    inv_std(r) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    hat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  out = (hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// d_out -> d_x, accumulating gain/bias gradients.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& d_out, const Mat<T>& hat, const Eigen::Matrix<T, Eigen::Dynamic, 1>& inv_std,
                           const Mat<T>& gain, Mat<T>& d_gain, Mat<T>& d_bias) {
  d_gain.row(0) += (d_out.array() * hat.array()).colwise().sum().matrix();
  d_bias.row(0) += d_out.colwise().sum();
  const Mat<T> d_hat = d_out.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<T>(hat.cols());
  Mat<T> d_x(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const T mean_dhat = d_hat.row(r).sum() / d;
    const T mean_dhat_hat = d_hat.row(r).dot(hat.row(r)) / d;
    d_x.row(r) = inv_std(r) * (d_hat.row(r).array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  return d_x;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
void check_window(const EncoderParameters<T>& p, std::span<const TokenId> ids, std::size_t valid_length) {
  if (ids.size() > p.config.max_positions) {
    throw Error("window of " + std::to_string(ids.size()) + " positions exceeds max_positions " +
                    std::to_string(p.config.max_positions),
                "max_positions");
  }
  if (valid_length == 0 || valid_length > ids.size()) throw Error("attention mask is malformed", "attention_mask");
  for (const auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= p.config.vocab_size) {
      throw Error("token id " + std::to_string(id) + " outside the encoder vocabulary", "vocab_size");
    }
  }
}

std::size_t mask_length(const Window& w) {
  if (w.attention_mask.size() != w.ids.size()) throw Error("attention mask length differs from ids", "attention_mask");
  std::size_t n = 0;
  while (n < w.attention_mask.size() && w.attention_mask[n]) ++n;
  for (std::size_t i = n; i < w.attention_mask.size(); ++i) {
    if (w.attention_mask[i]) throw Error("attention mask must be non-increasing", "attention_mask");
  }
  return n;
}

}  // namespace

template <typename T>
void encode_window(const EncoderParameters<T>& p, std::span<const TokenId> ids, std::size_t valid_length,
                   const ForwardOptions& opt, ForwardCache<T>& cache) {
  check_window(p, ids, valid_length);
  const auto& cfg = p.config;
  const auto m = static_cast<Eigen::Index>(ids.size());
  const auto n = static_cast<Eigen::Index>(valid_length);
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  cache.ids.assign(ids.begin(), ids.end());
  cache.valid_length = valid_length;
  Mat<T> x(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    x.row(i) = p.token_embedding.row(ids[static_cast<std::size_t>(i)]) + p.position_embedding.row(i);
  }
  cache.drop_embed = dropout_mask<T>(m, d, opt, cfg.dropout_rate, kSiteEmbedding, 0);
  if (cache.drop_embed.size()) x.array() *= cache.drop_embed.array();

  cache.layers.resize(cfg.n_layers);
  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const auto& lp = p.layers[li];
    auto& lc = cache.layers[li];
    lc.input = std::move(x);
    lc.q.noalias() = lc.input * lp.query_w;
    lc.q.rowwise() += lp.query_b.row(0);
    lc.k.noalias() = lc.input * lp.key_w;
    lc.v.noalias() = lc.input * lp.value_w;
    lc.v.rowwise() += lp.value_b.row(0);

    lc.attention.resize(cfg.n_heads);
    lc.context.resize(m, d);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      auto& a = lc.attention[h];
      a.noalias() = lc.q.middleCols(c0, dh) * lc.k.block(0, c0, n, dh).transpose();
      a *= scale;
      for (Eigen::Index r = 0; r < m; ++r) {
        const T mx = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - mx).exp();
        a.row(r) /= a.row(r).sum();
      }
      lc.context.middleCols(c0, dh).noalias() = a * lc.v.block(0, c0, n, dh);
    }
    Mat<T> attn_out = lc.context * lp.out_w;
    attn_out.rowwise() += lp.out_b.row(0);
    lc.drop_attn = dropout_mask<T>(m, d, opt, cfg.dropout_rate, kSiteAttention, li);
    if (lc.drop_attn.size()) attn_out.array() *= lc.drop_attn.array();
    layer_norm<T>(lc.input + attn_out, lp.ln1_gain, lp.ln1_bias, lc.ln1_hat, lc.ln1_inv_std, lc.h1);

    lc.ff_pre.noalias() = lc.h1 * lp.ff1_w;
    lc.ff_pre.rowwise() += lp.ff1_b.row(0);
    lc.ff_act = lc.ff_pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> ff_out = lc.ff_act * lp.ff2_w;
    ff_out.rowwise() += lp.ff2_b.row(0);
    lc.drop_ff = dropout_mask<T>(m, d, opt, cfg.dropout_rate, kSiteFeedForward, li);
    if (lc.drop_ff.size()) ff_out.array() *= lc.drop_ff.array();
    layer_norm<T>(lc.h1 + ff_out, lp.ln2_gain, lp.ln2_bias, lc.ln2_hat, lc.ln2_inv_std, x);
  }
  cache.hidden = std::move(x);
}

template <typename T>
void backward(const EncoderParameters<T>& p, const ForwardCache<T>& cache, const Mat<T>& d_hidden,
              EncoderParameters<T>& grads) {
  const auto& cfg = p.config;
  const auto m = cache.hidden.rows();
  const auto n = static_cast<Eigen::Index>(cache.valid_length);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> dx = d_hidden;
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lc = cache.layers[li];
    auto& lg = grads.layers[li];

    // Feed-forward sublayer.
    Mat<T> d_r2 = layer_norm_backward<T>(dx, lc.ln2_hat, lc.ln2_inv_std, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias);
    Mat<T> d_ff_out = d_r2;
    if (lc.drop_ff.size()) d_ff_out.array() *= lc.drop_ff.array();
    lg.ff2_w.noalias() += lc.ff_act.transpose() * d_ff_out;
    lg.ff2_b.row(0) += d_ff_out.colwise().sum();
    Mat<T> d_pre = d_ff_out * lp.ff2_w.transpose();
    d_pre.array() *= lc.ff_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    lg.ff1_w.noalias() += lc.h1.transpose() * d_pre;
    lg.ff1_b.row(0) += d_pre.colwise().sum();
    Mat<T> d_h1 = d_r2;
    d_h1.noalias() += d_pre * lp.ff1_w.transpose();

    // Attention sublayer.
    Mat<T> d_r1 = layer_norm_backward<T>(d_h1, lc.ln1_hat, lc.ln1_inv_std, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias);
    Mat<T> d_attn_out = d_r1;
    if (lc.drop_attn.size()) d_attn_out.array() *= lc.drop_attn.array();
    lg.out_w.noalias() += lc.context.transpose() * d_attn_out;
    lg.out_b.row(0) += d_attn_out.colwise().sum();
    const Mat<T> d_context = d_attn_out * lp.out_w.transpose();

    Mat<T> d_q = Mat<T>::Zero(m, lc.q.cols());
    Mat<T> d_k = Mat<T>::Zero(m, lc.k.cols());
    Mat<T> d_v = Mat<T>::Zero(m, lc.v.cols());
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      const auto& a = lc.attention[h];
      const auto d_ctx_h = d_context.middleCols(c0, dh);
      d_v.block(0, c0, n, dh).noalias() += a.transpose() * d_ctx_h;
      Mat<T> d_a = d_ctx_h * lc.v.block(0, c0, n, dh).transpose();
      // Softmax backward per row.
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (d_a.array() * a.array()).rowwise().sum();
      Mat<T> d_s = a.array() * (d_a.array().colwise() - row_dot.array());
      d_s *= scale;
      d_q.middleCols(c0, dh).noalias() += d_s * lc.k.block(0, c0, n, dh);
      d_k.block(0, c0, n, dh).noalias() += d_s.transpose() * lc.q.middleCols(c0, dh);
    }
    lg.query_w.noalias() += lc.input.transpose() * d_q;
    lg.query_b.row(0) += d_q.colwise().sum();
    lg.key_w.noalias() += lc.input.transpose() * d_k;
    lg.value_w.noalias() += lc.input.transpose() * d_v;
    lg.value_b.row(0) += d_v.colwise().sum();

    dx = d_r1;
    dx.noalias() += d_q * lp.query_w.transpose();
    dx.noalias() += d_k * lp.key_w.transpose();
    dx.noalias() += d_v * lp.value_w.transpose();
  }

  if (cache.drop_embed.size()) dx.array() *= cache.drop_embed.array();
  for (Eigen::Index i = 0; i < m; ++i) {
    grads.token_embedding.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

template <typename T>
WindowLogits forward_classify(const EncoderParameters<T>& p, const Window& w, bool train, std::uint64_t seed,
                              ForwardCache<T>* cache) {
  ForwardCache<T> local;
  auto& c = cache ? *cache : local;
  encode_window<T>(p, w.ids, mask_length(w), ForwardOptions{train, seed}, c);
  const Mat<T> logits = c.hidden.row(0) * p.classifier_w + p.classifier_b;
  WindowLogits out;
  out.doc_id = w.doc_id;
  out.window_index = w.index;
  out.logits = {static_cast<double>(logits(0, 0)), static_cast<double>(logits(0, 1))};
  out.probs = softmax2(out.logits);
  return out;
}

template <typename T>
std::vector<T> forward_embed(const EncoderParameters<T>& p, const Window& w, ForwardCache<T>* cache) {
  ForwardCache<T> local;
  auto& c = cache ? *cache : local;
  const std::size_t n = mask_length(w);
  encode_window<T>(p, w.ids, n, ForwardOptions{}, c);
  // Plain loops: a vectorized reduction into unaligned storage changes its
  // summation order with the buffer address.
  std::vector<T> out(p.config.d_model, T(0));
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(n); ++r) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += c.hidden(r, static_cast<Eigen::Index>(k));
  }
  for (auto& v : out) v /= static_cast<T>(n);
  return out;
}

template <typename T>
void embed_backward(const EncoderParameters<T>& p, const ForwardCache<T>& cache, std::span<const T> d_embedding,
                    EncoderParameters<T>& grads) {
  const auto n = static_cast<Eigen::Index>(cache.valid_length);
  Mat<T> d_hidden = Mat<T>::Zero(cache.hidden.rows(), cache.hidden.cols());
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(d_embedding.data(),
                                                                 static_cast<Eigen::Index>(d_embedding.size()));
  d_hidden.topRows(n).rowwise() = g / static_cast<T>(n);
  backward<T>(p, cache, d_hidden, grads);
}

template <typename T>
double classify_loss_backward(const EncoderParameters<T>& p, const Window& w, int label, bool train,
                              std::uint64_t seed, double scale, EncoderParameters<T>& grads) {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1", "label");
  ForwardCache<T> cache;
  const auto out = forward_classify<T>(p, w, train, seed, &cache);
  const double mx = std::max(out.logits[0], out.logits[1]);
  const double lse = mx + std::log(std::exp(out.logits[0] - mx) + std::exp(out.logits[1] - mx));
  const double loss = lse - out.logits[static_cast<std::size_t>(label)];
  if (!std::isfinite(loss)) throw DivergenceError("non-finite classification loss", "loss");

  Mat<T> d_logits(1, 2);
  d_logits << static_cast<T>((out.probs[0] - (label == 0)) * scale), static_cast<T>((out.probs[1] - (label == 1)) * scale);
  grads.classifier_w.noalias() += cache.hidden.row(0).transpose() * d_logits;
  grads.classifier_b += d_logits;
  Mat<T> d_hidden = Mat<T>::Zero(cache.hidden.rows(), cache.hidden.cols());
  d_hidden.row(0) = d_logits * p.classifier_w.transpose();
  backward<T>(p, cache, d_hidden, grads);
  return loss;
}

namespace {

template <typename T>
std::vector<TokenId> masked_ids(const Window& w, std::size_t valid, std::span<const std::size_t> positions) {
  std::vector<TokenId> ids = w.ids;
  for (const auto pos : positions) {
    if (pos == 0 || pos + 1 >= valid || ids[pos] == kMask) {
      throw Error("masked position " + std::to_string(pos) + " is not a distinct content position", "masked_positions");
    }
    ids[pos] = kMask;
  }
  return ids;
}

}  // namespace

template <typename T>
Mat<T> forward_mlm(const EncoderParameters<T>& p, const Window& w, std::span<const std::size_t> masked_positions,
                   bool train, std::uint64_t seed, ForwardCache<T>* cache) {
  const std::size_t n = mask_length(w);
  const auto ids = masked_ids<T>(w, n, masked_positions);
  Mat<T> logits(static_cast<Eigen::Index>(masked_positions.size()), static_cast<Eigen::Index>(p.config.vocab_size));
  if (masked_positions.empty()) return logits;
  ForwardCache<T> local;
  auto& c = cache ? *cache : local;
  encode_window<T>(p, ids, n, ForwardOptions{train, seed}, c);
  for (std::size_t i = 0; i < masked_positions.size(); ++i) {
    logits.row(static_cast<Eigen::Index>(i)) =
        c.hidden.row(static_cast<Eigen::Index>(masked_positions[i])) * p.mlm_w + p.mlm_b;
  }
  return logits;
}

template <typename T>
double mlm_loss_backward(const EncoderParameters<T>& p, const Window& w, std::span<const std::size_t> masked_positions,
                         bool train, std::uint64_t seed, double scale, EncoderParameters<T>& grads) {
  if (masked_positions.empty()) return 0.0;
  ForwardCache<T> cache;
  const Mat<T> logits = forward_mlm<T>(p, w, masked_positions, train, seed, &cache);
  const auto k = static_cast<double>(masked_positions.size());
  double loss = 0.0;
  Mat<T> d_hidden = Mat<T>::Zero(cache.hidden.rows(), cache.hidden.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto pos = static_cast<Eigen::Index>(masked_positions[static_cast<std::size_t>(i)]);
    const TokenId target = w.ids[static_cast<std::size_t>(pos)];
    const Eigen::Matrix<double, 1, Eigen::Dynamic> row = logits.row(i).template cast<double>();
    const double mx = row.maxCoeff();
    const Eigen::Matrix<double, 1, Eigen::Dynamic> e = (row.array() - mx).exp();
    const double z = e.sum();
    loss += (mx + std::log(z) - row(target)) / k;
    Eigen::Matrix<double, 1, Eigen::Dynamic> d = e / z;
    d(target) -= 1.0;
    const Mat<T> d_row = (d * (scale / k)).template cast<T>();
    grads.mlm_w.noalias() += cache.hidden.row(pos).transpose() * d_row;
    grads.mlm_b += d_row;
    d_hidden.row(pos) += d_row * p.mlm_w.transpose();
  }
  if (!std::isfinite(loss)) throw DivergenceError("non-finite masked-language-model loss", "loss");
  backward<T>(p, cache, d_hidden, grads);
  return loss;
}

#define MISDETECT_INSTANTIATE(T)                                                                                  \
  template struct ForwardCache<T>;                                                                                \
  template void encode_window<T>(const EncoderParameters<T>&, std::span<const TokenId>, std::size_t,             \
                                 const ForwardOptions&, ForwardCache<T>&);                                        \
  template void backward<T>(const EncoderParameters<T>&, const ForwardCache<T>&, const Mat<T>&,                   \
                            EncoderParameters<T>&);                                                               \
  template WindowLogits forward_classify<T>(const EncoderParameters<T>&, const Window&, bool, std::uint64_t,      \
                                            ForwardCache<T>*);                                                    \
  template std::vector<T> forward_embed<T>(const EncoderParameters<T>&, const Window&, ForwardCache<T>*);        \
  template void embed_backward<T>(const EncoderParameters<T>&, const ForwardCache<T>&, std::span<const T>,        \
                                  EncoderParameters<T>&);                                                         \
  template Mat<T> forward_mlm<T>(const EncoderParameters<T>&, const Window&, std::span<const std::size_t>, bool,  \
                                 std::uint64_t, ForwardCache<T>*);                                                \
  template double classify_loss_backward<T>(const EncoderParameters<T>&, const Window&, int, bool,                \
                                            std::uint64_t, double, EncoderParameters<T>&);                        \
  template double mlm_loss_backward<T>(const EncoderParameters<T>&, const Window&, std::span<const std::size_t>, \
                                       bool, std::uint64_t, double, EncoderParameters<T>&);

MISDETECT_INSTANTIATE(float)
MISDETECT_INSTANTIATE(double)

#undef MISDETECT_INSTANTIATE

}  // namespace misdetect
