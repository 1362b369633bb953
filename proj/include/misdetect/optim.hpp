#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "misdetect/encoder.hpp"

namespace misdetect {

/// AdamW with decoupled weight decay. Defaults are the fine-tuning values.
struct AdamWConfig {
  double learning_rate = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields absent from `j` keep the values in `defaults`.
  static AdamWConfig from_json(const nlohmann::json& j, AdamWConfig defaults);
};

struct ClipConfig {
  double max_grad_norm = 1.0;

  void validate() const;
};

/// -log softmax(logits)[label] via log-sum-exp.
double cross_entropy(const std::array<double, 2>& logits, int label);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// (cos(u, v) - target)^2. Throws on zero-norm or mismatched inputs.
double cosine_similarity_loss(std::span<const double> u, std::span<const double> v, int target);

/// Loss as above plus its gradients with respect to u and v.
double cosine_similarity_loss_grad(std::span<const double> u, std::span<const double> v, int target,
                                   std::span<double> d_u, std::span<double> d_v);

/// Global L2 norm over every tensor, accumulated in double.
template <typename T>
double global_norm(std::span<Mat<T>* const> tensors);

/// Scales every tensor by max_norm / g when the global norm g exceeds
/// max_norm (beyond 64 ulps of T); leaves them untouched otherwise.
/// Returns g.
template <typename T>
double clip_global_norm(std::span<Mat<T>* const> grads, const ClipConfig& cfg);

template <typename T>
double clip_global_norm(EncoderParameters<T>& grads, const ClipConfig& cfg);

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  /// One update. `decay[i]` selects whether tensor i takes weight decay.
  void step(std::span<Mat<T>* const> params, std::span<const Mat<T>* const> grads, const std::vector<bool>& decay);

  void step(EncoderParameters<T>& params, const EncoderParameters<T>& grads);

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Mat<T>> m_;
  std::vector<Mat<T>> v_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace misdetect
