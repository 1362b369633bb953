#include "misdetect/windowing.hpp"

#include <algorithm>

#include "misdetect/error.hpp"

namespace misdetect {

void WindowConfig::validate() const {
  if (max_seq_length < 4) throw Error("max_seq_length must be >= 4", "max_seq_length");
  if (overlap_den == 0 || overlap_num >= overlap_den) {
    throw Error("overlap fraction must lie in [0, 1)", "overlap");
  }
  if (stride() < 1 || overlap() >= capacity()) throw Error("window stride must be >= 1", "overlap");
}

std::size_t count_windows(std::size_t length, std::size_t window, std::size_t stride) {
  if (window == 0) throw Error("window size must be positive", "max_seq_length");
  if (stride == 0) throw Error("window stride must be positive", "stride");
  if (length <= window) return 1;
  return (length - window + stride - 1) / stride + 1;
}

std::vector<Window> make_windows(const TokenSequence& seq, const WindowConfig& cfg) {
  cfg.validate();
  return make_windows(seq, cfg.capacity(), cfg.stride());
}

std::vector<Window> make_windows(const TokenSequence& seq, std::size_t w, std::size_t s) {
  if (w == 0) throw Error("window capacity must be positive", "max_seq_length");
  if (s == 0 || s > w) throw Error("window stride must lie in [1, capacity]", "stride");
  const std::size_t m = w + 2;
  const std::size_t len = seq.length();
  const std::size_t n = count_windows(len, w, s);

  std::vector<Window> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Window win;
    win.doc_id = seq.doc_id;
    win.index = i;
    win.content_start = len > w ? std::min(i * s, len - w) : 0;
    win.content_length = std::min(w, len);
    win.ids.assign(m, kPad);
    win.attention_mask.assign(m, 0);
    win.ids[0] = kCls;
    std::copy_n(seq.ids.begin() + static_cast<long>(win.content_start), win.content_length,
                win.ids.begin() + 1);
    win.ids[win.content_length + 1] = kSep;
    std::fill_n(win.attention_mask.begin(), win.valid_length(), std::uint8_t{1});
    out.push_back(std::move(win));
  }
  return out;
}

nlohmann::json window_to_json(const Window& w) {
  return {{"doc_id", w.doc_id},
          {"index", w.index},
          {"content_start", w.content_start},
          {"content_length", w.content_length},
          {"ids", w.ids},
          {"attention_mask", w.attention_mask}};
}

}  // namespace misdetect
