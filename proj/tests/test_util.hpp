#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "misdetect/encoder.hpp"
#include "misdetect/rng.hpp"
#include "misdetect/windowing.hpp"

namespace misdetect::testing {

/// The small configuration used for gradient checks.
inline EncoderConfig tiny_config(std::size_t n_layers = 1) {
  EncoderConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = n_layers;
  c.d_ff = 16;
  c.max_positions = 6;
  c.dropout_rate = 0.1;
  return c;
}

/// Parameters with every entry drawn from N(0, scale^2) and layer-norm gains
/// near one, so gradients are well away from zero.
template <typename T>
EncoderParameters<T> random_params(const EncoderConfig& cfg, std::uint64_t seed, double scale = 0.4) {
  auto p = EncoderParameters<T>::zeros(cfg);
  SplitMix64 rng(seed);
  p.for_each([&](const std::string& name, Mat<T>& m, bool) {
    const bool gain = name.ends_with(".gain");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  });
  return p;
}

/// Window with `content` tokens and `m` total positions.
inline Window make_window(const std::vector<TokenId>& content, std::size_t m, std::string doc_id = "doc") {
  TokenSequence seq{std::move(doc_id), content};
  WindowConfig cfg{m};
  return make_windows(seq, cfg).front();
}

}  // namespace misdetect::testing
