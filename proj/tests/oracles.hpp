#pragma once

// Independent, deliberately naive re-implementations used as test oracles.
// Nothing here calls into the library's numerical code.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dne/data.hpp"
#include "dne/network.hpp"

namespace oracle {

struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Map() = default;
  Map(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

/// Quadruple loop cross-correlation; kernel layout [out][in][3][3].
inline Map conv3x3(const Map& in, const std::vector<double>& k, const std::vector<double>& b, int out_c) {
  Map out(out_c, in.h - 2, in.w - 2);
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        double s = b[o];
        for (int i = 0; i < in.c; ++i) {
          for (int dy = 0; dy < 3; ++dy) {
            for (int dx = 0; dx < 3; ++dx) {
              s += in.at(i, y + dy, x + dx) * k[((static_cast<std::size_t>(o) * in.c + i) * 3 + dy) * 3 + dx];
            }
          }
        }
        out.at(o, y, x) = s;
      }
    }
  }
  return out;
}

/// Brute-force window max with floor semantics for odd sizes. When `pattern`
/// is given, the winning window position of every cell is appended to it.
inline Map maxpool2(const Map& in, std::vector<int>* pattern = nullptr) {
  Map out(in.c, in.h / 2, in.w / 2);
  for (int ch = 0; ch < in.c; ++ch) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        double m = -INFINITY;
        int arg = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            if (in.at(ch, 2 * y + dy, 2 * x + dx) > m) {
              m = in.at(ch, 2 * y + dy, 2 * x + dx);
              arg = dy * 2 + dx;
            }
          }
        }
        out.at(ch, y, x) = m;
        if (pattern) pattern->push_back(arg);
      }
    }
  }
  return out;
}

inline void relu(std::vector<double>& v, std::vector<int>* pattern = nullptr) {
  for (double& x : v) {
    if (pattern) pattern->push_back(x > 0 ? 1 : 0);
    x = std::max(x, 0.0);
  }
}

/// Sequential reader over a flat parameter vector.
struct Cursor {
  const std::vector<double>& w;
  std::size_t pos = 0;
  std::vector<double> take(std::size_t n) {
    std::vector<double> out(w.begin() + static_cast<std::ptrdiff_t>(pos),
                            w.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
};

inline std::vector<double> dense(const std::vector<double>& W, const std::vector<double>& b,
                                 const std::vector<double>& x) {
  std::vector<double> y(b);
  for (std::size_t r = 0; r < y.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += W[r * x.size() + c] * x[c];
  }
  return y;
}

/// Straight-line evaluation of the classifier in double precision.
/// `masks[branch]`, when given, multiplies the branch's first linear layer
/// output after relu. `pattern` collects every relu sign and pool winner, so
/// two evaluations with equal patterns lie on the same smooth piece.
/// Returns {p_normal, p_tumor}.
inline std::array<double, 2> forward(const dne::NetworkSpec& s, const std::vector<double>& w,
                                     const dne::OrbitSample& sample,
                                     const std::vector<std::vector<float>>& masks = {},
                                     std::vector<int>* pattern = nullptr) {
  Cursor cur{w};
  const int c1 = s.conv1_channels, c2 = s.conv2_channels;
  const auto k1 = cur.take(static_cast<std::size_t>(c1) * 9);
  const auto b1 = cur.take(c1);
  const auto k2 = cur.take(static_cast<std::size_t>(c2) * c1 * 9);
  const auto b2 = cur.take(c2);
  const int h2 = ((s.input_height - 2) / 2 - 2) / 2;
  const int w2 = ((s.input_width - 2) / 2 - 2) / 2;
  const std::size_t flat = static_cast<std::size_t>(c2) * h2 * w2;
  const auto fw = cur.take(flat * s.branch_width);
  const auto fb = cur.take(s.branch_width);
  const std::size_t concat = static_cast<std::size_t>(s.branch_width) * s.branch_count();
  const auto hw = cur.take(concat * s.head_width);
  const auto hb = cur.take(s.head_width);
  const auto ow = cur.take(static_cast<std::size_t>(s.head_width) * 2);
  const auto ob = cur.take(2);

  std::vector<double> joined;
  const dne::Image* images[2] = {&sample.left, &sample.right};
  for (int branch = 0; branch < s.branch_count(); ++branch) {
    Map x(1, images[branch]->height, images[branch]->width);
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) x.at(0, y, xx) = images[branch]->at(y, xx);
    }
    Map a = conv3x3(x, k1, b1, c1);
    relu(a.v, pattern);
    a = maxpool2(a, pattern);
    a = conv3x3(a, k2, b2, c2);
    relu(a.v, pattern);
    a = maxpool2(a, pattern);
    std::vector<double> h = dense(fw, fb, a.v);
    relu(h, pattern);
    if (!masks.empty()) {
      for (std::size_t j = 0; j < h.size(); ++j) h[j] *= masks[static_cast<std::size_t>(branch)][j];
    }
    joined.insert(joined.end(), h.begin(), h.end());
  }
  std::vector<double> hidden = dense(hw, hb, joined);
  relu(hidden, pattern);
  const std::vector<double> logits = dense(ow, ob, hidden);
  // Output row 0 is normal, row 1 is tumor.
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

inline std::array<double, 2> forward(const dne::NetworkSpec& s, const std::vector<float>& w,
                                     const dne::OrbitSample& sample,
                                     const std::vector<std::vector<float>>& masks = {}) {
  return forward(s, std::vector<double>(w.begin(), w.end()), sample, masks);
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  ///< coordinates whose step crossed a relu or pool switch
};

/// Central differences of the oracle loss -ln p(label) in double precision,
/// compared with `analytic`. Relative error is |a - f| / max(1, |a|, |f|).
inline GradientCheck finite_difference_check(const dne::NetworkSpec& s, const std::vector<double>& w,
                                             const dne::OrbitSample& sample, dne::Label label,
                                             const std::vector<double>& analytic,
                                             const std::vector<std::vector<float>>& masks = {},
                                             double h = 1e-3) {
  const int target = label == dne::Label::Tumor ? 1 : 0;
  GradientCheck out;
  std::vector<double> wp = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::vector<int> pat_plus, pat_minus;
    wp[i] = w[i] + h;
    const double lp = -std::log(forward(s, wp, sample, masks, &pat_plus)[target]);
    wp[i] = w[i] - h;
    const double lm = -std::log(forward(s, wp, sample, masks, &pat_minus)[target]);
    wp[i] = w[i];
    if (pat_plus != pat_minus) {
      ++out.skipped_kinks;
      continue;
    }
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(fd - analytic[i]) / denom);
    ++out.checked;
  }
  return out;
}

inline double binary_entropy(double p) {
  double s = 0;
  for (double q : {p, 1.0 - p}) {
    if (q > 0) s -= q * std::log2(q);
  }
  return s;
}

/// Rank utilities by sorting (index, reward) pairs with an explicit comparator.
inline std::vector<double> rank_utilities(const std::vector<int>& r) {
  const std::size_t n = r.size();
  const double p = static_cast<double>(n) / 2.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return r[a] != r[b] ? r[a] > r[b] : a < b;
  });
  std::vector<double> raw(n);
  double denom = 0;
  for (std::size_t k = 0; k < n; ++k) {
    raw[k] = std::max(0.0, std::log2(p + 1) - std::log2(static_cast<double>(k) + 1));
    denom += raw[k];
  }
  std::vector<double> u(n);
  for (std::size_t k = 0; k < n; ++k) u[order[k]] = raw[k] / denom + 1.0 / (2.0 * p);
  return u;
}

struct Confusion {
  int tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Per-sample recount of the confusion matrix from the oracle forward pass.
inline Confusion tally(const dne::NetworkSpec& s, const std::vector<float>& w,
                       const std::vector<dne::OrbitSample>& data) {
  Confusion c;
  for (const auto& smp : data) {
    const auto p = forward(s, w, smp);
    const bool says_tumor = p[1] > p[0];
    const bool is_tumor = smp.label == dne::Label::Tumor;
    if (says_tumor && is_tumor) ++c.tp;
    else if (!says_tumor && !is_tumor) ++c.tn;
    else if (says_tumor) ++c.fp;
    else ++c.fn;
  }
  return c;
}

/// Majority frequency at which the binary entropy crosses `bits`, by bisection.
inline double entropy_crossing(double bits) {
  double lo = 0.5, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (binary_entropy(mid) > bits ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Mean intensity over a disk.
inline double disk_mean(const dne::Image& im, double cx, double cy, double r) {
  double s = 0;
  int n = 0;
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
        s += im.at(y, x);
        ++n;
      }
    }
  }
  return n ? s / n : 0.0;
}

/// Leave-nothing-out training accuracy of a 1-D logistic regression fitted by
/// gradient descent on standardized features.
inline double logistic_probe_accuracy(const std::vector<double>& feature, const std::vector<int>& label) {
  const std::size_t n = feature.size();
  double mean = 0, var = 0;
  for (double f : feature) mean += f;
  mean /= static_cast<double>(n);
  for (double f : feature) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-12;
  double a = 0, b = 0;
  for (int it = 0; it < 5000; ++it) {
    double ga = 0, gb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = (feature[i] - mean) / sd;
      const double p = 1.0 / (1.0 + std::exp(-(a * z + b)));
      ga += (p - label[i]) * z;
      gb += (p - label[i]);
    }
    a -= 0.5 * ga / static_cast<double>(n);
    b -= 0.5 * gb / static_cast<double>(n);
  }
  int right = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (feature[i] - mean) / sd;
    right += ((a * z + b) > 0 ? 1 : 0) == label[i];
  }
  return static_cast<double>(right) / static_cast<double>(n);
}

}  // namespace oracle
