#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "misdetect/windowing.hpp"

namespace misdetect {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_positions = 128;
  double dropout_rate = 0.1;
  static constexpr std::size_t n_classes = 2;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct LayerParameters {
  // No key bias: it shifts every score in a row equally, so softmax ignores it.
  Mat<T> query_w, query_b, key_w, value_w, value_b, out_w, out_b;
  Mat<T> ln1_gain, ln1_bias;
  Mat<T> ff1_w, ff1_b, ff2_w, ff2_b;
  Mat<T> ln2_gain, ln2_bias;
};

/// Every trainable tensor. Vectors are stored as 1 x n matrices so all
/// tensors share one type. Also used as the gradient accumulator.
template <typename T>
struct EncoderParameters {
  EncoderConfig config;
  Mat<T> token_embedding;     // vocab x d
  Mat<T> position_embedding;  // positions x d
  std::vector<LayerParameters<T>> layers;
  Mat<T> classifier_w, classifier_b;  // d x 2, 1 x 2
  Mat<T> mlm_w, mlm_b;                // d x vocab, 1 x vocab

  /// All-zero tensors of the right shapes (layer-norm gains included).
  static EncoderParameters zeros(const EncoderConfig& cfg);

  /// Weights ~ N(0, 0.02^2) drawn in tensor order from SplitMix64(seed),
  /// biases zero, layer-norm gains one.
  static EncoderParameters initialize(const EncoderConfig& cfg, std::uint64_t seed);

  /// Visits tensors in canonical order with their names and whether they
  /// take weight decay (biases and layer-norm tensors do not).
  void for_each(const std::function<void(const std::string&, Mat<T>&, bool)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat<T>&, bool)>& fn) const;

  void set_zero();
  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename U>
  EncoderParameters<U> cast() const;
};

/// Per-window output of the classification head.
struct WindowLogits {
  std::string doc_id;
  std::size_t window_index = 0;
  std::array<double, 2> logits{0.0, 0.0};
  std::array<double, 2> probs{0.5, 0.5};
};

/// Numerically stable two-way softmax.
std::array<double, 2> softmax2(const std::array<double, 2>& logits);

/// Intermediate values of one forward pass, kept for the backward pass.
template <typename T>
struct ForwardCache {
  struct Layer {
    Mat<T> input, q, k, v, context;
    std::vector<Mat<T>> attention;  // per head: positions x valid keys
    Mat<T> drop_attn;               // dropout multipliers, empty when off
    Mat<T> ln1_hat, h1;
    Eigen::Matrix<T, Eigen::Dynamic, 1> ln1_inv_std;
    Mat<T> ff_pre, ff_act;
    Mat<T> drop_ff;
    Mat<T> ln2_hat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> ln2_inv_std;
  };
  std::vector<TokenId> ids;
  std::size_t valid_length = 0;
  Mat<T> drop_embed;
  std::vector<Layer> layers;
  Mat<T> hidden;  // final hidden states, positions x d

  /// Attention weights of one head padded to positions x positions; columns
  /// for PAD keys are zero.
  Mat<T> attention_matrix(std::size_t layer, std::size_t head) const;
};

struct ForwardOptions {
  bool train = false;    ///< enables dropout
  std::uint64_t seed = 0;  ///< dropout key
};

/// Runs the encoder stack over one window. `ids` may be shorter than
/// max_positions; keys at positions >= valid_length are masked out.
template <typename T>
void encode_window(const EncoderParameters<T>& p, std::span<const TokenId> ids, std::size_t valid_length,
                   const ForwardOptions& opt, ForwardCache<T>& cache);

/// Accumulates parameter gradients given dLoss/dHidden (positions x d).
template <typename T>
void backward(const EncoderParameters<T>& p, const ForwardCache<T>& cache, const Mat<T>& d_hidden,
              EncoderParameters<T>& grads);

/// Classification head on the CLS hidden state.
template <typename T>
WindowLogits forward_classify(const EncoderParameters<T>& p, const Window& w, bool train, std::uint64_t seed,
                              ForwardCache<T>* cache = nullptr);

/// Mean of final hidden states over positions with mask 1, no dropout.
template <typename T>
std::vector<T> forward_embed(const EncoderParameters<T>& p, const Window& w, ForwardCache<T>* cache = nullptr);

/// Substitutes MASK at each position and returns one vocab-sized logits row
/// per masked position, in the given order.
template <typename T>
Mat<T> forward_mlm(const EncoderParameters<T>& p, const Window& w, std::span<const std::size_t> masked_positions,
                   bool train = false, std::uint64_t seed = 0, ForwardCache<T>* cache = nullptr);

/// Cross-entropy of the classification head for one window. Gradients scaled
/// by `scale` are added to `grads`. Returns the unscaled loss.
template <typename T>
double classify_loss_backward(const EncoderParameters<T>& p, const Window& w, int label, bool train,
                              std::uint64_t seed, double scale, EncoderParameters<T>& grads);

/// Backpropagates dLoss/dEmbedding of forward_embed.
template <typename T>
void embed_backward(const EncoderParameters<T>& p, const ForwardCache<T>& cache, std::span<const T> d_embedding,
                    EncoderParameters<T>& grads);

/// Masked-token cross-entropy averaged over masked positions, gradients
/// scaled by `scale`. Zero masked positions give loss 0 and no gradient.
template <typename T>
double mlm_loss_backward(const EncoderParameters<T>& p, const Window& w, std::span<const std::size_t> masked_positions,
                         bool train, std::uint64_t seed, double scale, EncoderParameters<T>& grads);

extern template struct EncoderParameters<float>;
extern template struct EncoderParameters<double>;

}  // namespace misdetect
