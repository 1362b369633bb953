#include "misdetect/optim.hpp"

#include <cmath>
#include <limits>

#include "misdetect/error.hpp"

namespace misdetect {

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive", "learning_rate");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw Error("betas must lie in (0, 1)", "betas");
  if (!(epsilon > 0.0)) throw Error("epsilon must be positive", "epsilon");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative", "weight_decay");
}

nlohmann::json AdamWConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2},
          {"epsilon", epsilon},             {"weight_decay", weight_decay}};
}

AdamWConfig AdamWConfig::from_json(const nlohmann::json& j, AdamWConfig d) {
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  d.epsilon = j.value("epsilon", d.epsilon);
  d.weight_decay = j.value("weight_decay", d.weight_decay);
  d.validate();
  return d;
}

void ClipConfig::validate() const {
  if (!(max_grad_norm > 0.0)) throw Error("max_grad_norm must be positive", "max_grad_norm");
}

double cross_entropy(const std::array<double, 2>& logits, int label) {
  if (label != 0 && label != 1) throw Error("label must be 0 or 1", "label");
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  return lse - logits[static_cast<std::size_t>(label)];
}

namespace {

struct CosineParts {
  double dot = 0.0, nu = 0.0, nv = 0.0;
};

CosineParts cosine_parts(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw Error("embeddings must be non-empty and equal length", "embedding");
  CosineParts c;
  for (std::size_t i = 0; i < u.size(); ++i) {
    c.dot += u[i] * v[i];
    c.nu += u[i] * u[i];
    c.nv += v[i] * v[i];
  }
  c.nu = std::sqrt(c.nu);
  c.nv = std::sqrt(c.nv);
  if (c.nu == 0.0 || c.nv == 0.0) throw Error("cosine similarity of a zero vector", "embedding");
  return c;
}

}  // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const auto c = cosine_parts(u, v);
  return c.dot / (c.nu * c.nv);
}

double cosine_similarity_loss(std::span<const double> u, std::span<const double> v, int target) {
  if (target != 0 && target != 1) throw Error("pair target must be 0 or 1", "target");
  const double diff = cosine_similarity(u, v) - target;
  return diff * diff;
}

double cosine_similarity_loss_grad(std::span<const double> u, std::span<const double> v, int target,
                                   std::span<double> d_u, std::span<double> d_v) {
  if (target != 0 && target != 1) throw Error("pair target must be 0 or 1", "target");
  const auto c = cosine_parts(u, v);
  const double cos = c.dot / (c.nu * c.nv);
  const double diff = cos - target;
  const double g = 2.0 * diff;
  // d cos / du = v / (|u||v|) - cos * u / |u|^2
  for (std::size_t i = 0; i < u.size(); ++i) {
    d_u[i] = g * (v[i] / (c.nu * c.nv) - cos * u[i] / (c.nu * c.nu));
    d_v[i] = g * (u[i] / (c.nu * c.nv) - cos * v[i] / (c.nv * c.nv));
  }
  return diff * diff;
}

template <typename T>
double global_norm(std::span<Mat<T>* const> tensors) {
  double sq = 0.0;
  for (const auto* t : tensors) {
    for (Eigen::Index i = 0; i < t->size(); ++i) {
      const auto x = static_cast<double>(t->data()[i]);
      sq += x * x;
    }
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(std::span<Mat<T>* const> grads, const ClipConfig& cfg) {
  cfg.validate();
  const double norm = global_norm<T>(grads);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm", "gradients");
  // A norm within a few ulps of the limit counts as clipped; rescaling can
  // land one ulp above max_norm and clipping must stay idempotent.
  const double slack = 64.0 * std::numeric_limits<T>::epsilon();
  if (norm > cfg.max_grad_norm * (1.0 + slack)) {
    for (auto* t : grads) {
      for (Eigen::Index i = 0; i < t->size(); ++i) {
        t->data()[i] = static_cast<T>(static_cast<double>(t->data()[i]) * cfg.max_grad_norm / norm);
      }
    }
  }
  return norm;
}

template <typename T>
double clip_global_norm(EncoderParameters<T>& grads, const ClipConfig& cfg) {
  std::vector<Mat<T>*> ptrs;
  grads.for_each([&](const std::string&, Mat<T>& m, bool) { ptrs.push_back(&m); });
  return clip_global_norm<T>(std::span<Mat<T>* const>(ptrs), cfg);
}

template <typename T>
void AdamW<T>::step(std::span<Mat<T>* const> params, std::span<const Mat<T>* const> grads,
                    const std::vector<bool>& decay) {
  if (params.size() != grads.size() || params.size() != decay.size()) {
    throw Error("parameter and gradient lists differ in length", "optimizer");
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("optimizer state does not match parameters", "optimizer");
  ++t_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const T lr = static_cast<T>(cfg_.learning_rate);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = *grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m_[k].size() != p.size()) {
      throw Error("gradient shape differs from parameter shape", "optimizer");
    }
    const T wd = decay[k] ? static_cast<T>(cfg_.weight_decay) : T(0);
    T* pd = p.data();
    const T* gd = g.data();
    T* md = m_[k].data();
    T* vd = v_[k].data();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      md[i] = static_cast<T>(b1) * md[i] + static_cast<T>(1.0 - b1) * gd[i];
      vd[i] = static_cast<T>(b2) * vd[i] + static_cast<T>(1.0 - b2) * gd[i] * gd[i];
      const T m_hat = md[i] / static_cast<T>(bias1);
      const T v_hat = vd[i] / static_cast<T>(bias2);
      pd[i] -= lr * (m_hat / (std::sqrt(v_hat) + static_cast<T>(cfg_.epsilon)) + wd * pd[i]);
    }
    if (!p.allFinite()) throw DivergenceError("non-finite parameter after AdamW update", "optimizer");
  }
}

template <typename T>
void AdamW<T>::step(EncoderParameters<T>& params, const EncoderParameters<T>& grads) {
  std::vector<Mat<T>*> ps;
  std::vector<const Mat<T>*> gs;
  std::vector<bool> decay;
  params.for_each([&](const std::string&, Mat<T>& m, bool d) {
    ps.push_back(&m);
    decay.push_back(d);
  });
  grads.for_each([&](const std::string&, const Mat<T>& m, bool) { gs.push_back(&m); });
  step(std::span<Mat<T>* const>(ps), std::span<const Mat<T>* const>(gs), decay);
}

template class AdamW<float>;
template class AdamW<double>;
template double global_norm<float>(std::span<Mat<float>* const>);
template double global_norm<double>(std::span<Mat<double>* const>);
template double clip_global_norm<float>(std::span<Mat<float>* const>, const ClipConfig&);
template double clip_global_norm<double>(std::span<Mat<double>* const>, const ClipConfig&);
template double clip_global_norm<float>(EncoderParameters<float>&, const ClipConfig&);
template double clip_global_norm<double>(EncoderParameters<double>&, const ClipConfig&);

}  // namespace misdetect
