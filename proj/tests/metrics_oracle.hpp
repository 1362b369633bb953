#pragma once

#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

namespace misdetect::testing {

struct OracleMetrics {
  double mcc, accuracy, f1;
};

// Straight from the definitions, tallying the vectors itself, in 50 digits.
inline OracleMetrics metrics_oracle(const std::vector<int>& preds, const std::vector<int>& labels) {
  using Big = boost::multiprecision::cpp_bin_float_50;
  Big tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == 1) (labels[i] == 1 ? tp : fp) += 1;
    else (labels[i] == 1 ? fn : tn) += 1;
  }
  const Big denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  const Big mcc = denom == 0 ? Big(0) : Big((tp * tn - fp * fn) / sqrt(denom));
  const Big acc = (tp + tn) / Big(preds.size());
  const Big f1_denom = 2 * tp + fp + fn;
  const Big f1 = f1_denom == 0 ? Big(0) : Big(2 * tp / f1_denom);
  return {mcc.convert_to<double>(), acc.convert_to<double>(), f1.convert_to<double>()};
}

}  // namespace misdetect::testing
