#pragma once

// Slow, direct reference implementations used as test oracles. Nothing here
// calls into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // row-major [rows][cols]

inline Mat random_mat(std::mt19937_64& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (auto& v : r) v = u(rng);
  return m;
}

inline std::vector<double> flatten(const Mat& m) {
  std::vector<double> out;
  for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline Mat unflatten(const std::vector<double>& v, int rows, int cols) {
  Mat m(rows, std::vector<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m[i][j] = v[static_cast<std::size_t>(i) * cols + j];
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b[0].size();
  Mat out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i][t] * b[t][j];
      out[i][j] = acc;
    }
  return out;
}

// one head over columns [c0, c1); keys with mask 0 are skipped
inline Mat attention_head(const Mat& q, const Mat& k, const Mat& v, int c0, int c1, double logit_scale,
                          const std::vector<std::uint8_t>* mask = nullptr) {
  Mat out(q.size(), std::vector<double>(c1 - c0, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits;
    std::vector<std::size_t> keys;
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (mask && !(*mask)[j]) continue;
      double dot = 0.0;
      for (int c = c0; c < c1; ++c) dot += q[i][c] * k[j][c];
      logits.push_back(dot * logit_scale);
      keys.push_back(j);
    }
    if (keys.empty()) continue;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t t = 0; t < keys.size(); ++t)
      for (int c = c0; c < c1; ++c) out[i][c - c0] += logits[t] / z * v[keys[t]][c];
  }
  return out;
}

inline Mat cross_attention(const Mat& query_src, const Mat& kv_src, const Mat& wq, const Mat& wk, const Mat& wv,
                           bool scaled, const std::vector<std::uint8_t>* mask = nullptr) {
  const Mat q = matmul(query_src, wq), k = matmul(kv_src, wk), v = matmul(kv_src, wv);
  const int d = static_cast<int>(wq[0].size());
  return attention_head(q, k, v, 0, d, scaled ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0, mask);
}

inline Mat mhsa(const Mat& x, int heads, const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo,
                const std::vector<double>& bo, bool scaled) {
  const Mat q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  const int d = static_cast<int>(wq[0].size());
  const int hd = d / heads;
  Mat concat(x.size(), std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const Mat o = attention_head(q, k, v, h * hd, (h + 1) * hd, scaled ? 1.0 / std::sqrt(double(hd)) : 1.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int c = 0; c < hd; ++c) concat[i][h * hd + c] = o[i][c];
  }
  Mat out = matmul(concat, wo);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (int c = 0; c < d; ++c) out[i][c] += bo[c] + x[i][c];
  return out;
}

// ---- feature maps [c][h][w] stored flat ----

struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Map() = default;
  Map(int c_, int h_, int w_, double fill = 0.0) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, fill) {}
  double& at(int ch, int r, int col) { return v[(std::size_t(ch) * h + r) * w + col]; }
  double at(int ch, int r, int col) const { return v[(std::size_t(ch) * h + r) * w + col]; }
};

inline Map random_map(std::mt19937_64& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Map m(c, h, w);
  for (auto& x : m.v) x = u(rng);
  return m;
}

// kernel [co][ci][3][3] flat; circular columns, replicate rows
inline Map conv3x3(const Map& x, const std::vector<double>& kernel, const std::vector<double>& bias, int c_out) {
  Map out(c_out, x.h, x.w);
  for (int o = 0; o < c_out; ++o)
    for (int r = 0; r < x.h; ++r)
      for (int col = 0; col < x.w; ++col) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int i = 0; i < x.c; ++i)
          for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
              const int rr = std::clamp(r + kr - 1, 0, x.h - 1);
              const int cc = ((col + kc - 1) % x.w + x.w) % x.w;
              acc += kernel[((std::size_t(o) * x.c + i) * 3 + kr) * 3 + kc] * x.at(i, rr, cc);
            }
        out.at(o, r, col) = acc;
      }
  return out;
}

// weight [co][ci] flat
inline Map conv1x1(const Map& x, const std::vector<double>& weight, int c_out) {
  Map out(c_out, x.h, x.w);
  for (int o = 0; o < c_out; ++o)
    for (int i = 0; i < x.c; ++i)
      for (int p = 0; p < x.h * x.w; ++p)
        out.v[std::size_t(o) * x.h * x.w + p] += weight[std::size_t(o) * x.c + i] * x.v[std::size_t(i) * x.h * x.w + p];
  return out;
}

// sample position in source pixel-center coordinates; rows clamp, columns wrap
inline double bilinear(const Map& x, int ch, double row, double col) {
  const double r = std::clamp(row, 0.0, double(x.h - 1));
  const int r0 = static_cast<int>(std::floor(r));
  const int r1 = std::min(r0 + 1, x.h - 1);
  const double fr = r - r0;
  const int c0 = static_cast<int>(std::floor(col));
  const double fc = col - c0;
  auto wrap = [&](int c) { return ((c % x.w) + x.w) % x.w; };
  return (1 - fr) * ((1 - fc) * x.at(ch, r0, wrap(c0)) + fc * x.at(ch, r0, wrap(c0 + 1))) +
         fr * ((1 - fc) * x.at(ch, r1, wrap(c0)) + fc * x.at(ch, r1, wrap(c0 + 1)));
}

inline Map upsample2x(const Map& x) {
  Map out(x.c, 2 * x.h, 2 * x.w);
  for (int ch = 0; ch < x.c; ++ch)
    for (int r = 0; r < out.h; ++r)
      for (int c = 0; c < out.w; ++c) out.at(ch, r, c) = bilinear(x, ch, (r + 0.5) / 2.0 - 0.5, (c + 0.5) / 2.0 - 0.5);
  return out;
}

// instance / layer / batch statistics mixed by softmax weights; batch == instance at batch size 1
inline Map switchable_norm(const Map& x, const std::vector<double>& mean_logits, const std::vector<double>& var_logits,
                           const std::vector<double>& gamma, const std::vector<double>& beta, double eps = 1e-5) {
  auto softmax = [](const std::vector<double>& l) {
    std::vector<double> e(3);
    double z = 0;
    for (int i = 0; i < 3; ++i) z += (e[i] = std::exp(l[i]));
    for (auto& v : e) v /= z;
    return e;
  };
  const auto wm = softmax(mean_logits), wv = softmax(var_logits);
  const int n = x.h * x.w;
  double all_sum = 0;
  for (double v : x.v) all_sum += v;
  const double mu_l = all_sum / x.v.size();
  double var_l = 0;
  for (double v : x.v) var_l += (v - mu_l) * (v - mu_l);
  var_l /= x.v.size();
  Map out(x.c, x.h, x.w);
  for (int ch = 0; ch < x.c; ++ch) {
    double s = 0;
    for (int p = 0; p < n; ++p) s += x.v[std::size_t(ch) * n + p];
    const double mu_i = s / n;
    double vi = 0;
    for (int p = 0; p < n; ++p) vi += std::pow(x.v[std::size_t(ch) * n + p] - mu_i, 2);
    vi /= n;
    const double mu = wm[0] * mu_i + wm[1] * mu_l + wm[2] * mu_i;
    const double var = wv[0] * vi + wv[1] * var_l + wv[2] * vi;
    for (int p = 0; p < n; ++p)
      out.v[std::size_t(ch) * n + p] = gamma[ch] * (x.v[std::size_t(ch) * n + p] - mu) / std::sqrt(var + eps) + beta[ch];
  }
  return out;
}

// ---- losses and metrics on [h][w] planes with a validity mask ----

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  std::vector<std::uint8_t> valid;
  double at(int r, int c) const { return v[std::size_t(r) * w + c]; }
  bool ok(int r, int c) const { return valid.empty() || valid[std::size_t(r) * w + c]; }
};

inline double mse(const Plane& p, const Plane& g) {
  double s = 0;
  int n = 0;
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c)
      if (g.ok(r, c)) {
        s += (p.at(r, c) - g.at(r, c)) * (p.at(r, c) - g.at(r, c));
        ++n;
      }
  return s / n;
}

inline constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

inline double stencil(const Plane& x, const int k[3][3], int r, int c) {
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += k[i][j] * x.at(r + i - 1, c + j - 1);
  return s;
}

// per-direction absolute Sobel response, two terms averaged, mean over interior pixels
inline std::optional<double> gradient(const Plane& p, const Plane& g) {
  if (g.h < 3 || g.w < 3) return std::nullopt;
  double s = 0;
  int n = 0;
  for (int r = 1; r + 1 < g.h; ++r)
    for (int c = 1; c + 1 < g.w; ++c) {
      bool all = true;
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) all = all && g.ok(r + i, c + j);
      if (!all) continue;
      s += 0.5 * (std::abs(std::abs(stencil(p, kSobelX, r, c)) - std::abs(stencil(g, kSobelX, r, c))) +
                  std::abs(std::abs(stencil(p, kSobelY, r, c)) - std::abs(stencil(g, kSobelY, r, c))));
      ++n;
    }
  return s / n;
}

inline double berhu(const Plane& p, const Plane& g) {
  double cmax = 0;
  int n = 0;
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c)
      if (g.ok(r, c)) {
        cmax = std::max(cmax, std::abs(p.at(r, c) - g.at(r, c)));
        ++n;
      }
  const double th = 0.2 * cmax;
  double s = 0;
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c) {
      if (!g.ok(r, c)) continue;
      const double e = std::abs(p.at(r, c) - g.at(r, c));
      s += e <= th ? e : (e * e + th * th) / (2 * th);
    }
  return th > 0 ? s / n : 0.0;
}

struct Metrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, d1 = 0, d2 = 0, d3 = 0;
  int n = 0;
};

inline Metrics metrics(const std::vector<double>& pred, const std::vector<double>& gt, double max_depth) {
  Metrics m;
  double se = 0;
  int c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt[i] > 0 && gt[i] <= max_depth)) continue;
    const double d = pred[i], g = gt[i];
    m.abs_rel += std::abs(d - g) / g;
    m.sq_rel += (d - g) * (d - g) / g;
    se += (d - g) * (d - g);
    const double ratio = std::max(d / g, g / d);
    c1 += ratio < 1.25;
    c2 += ratio < 1.25 * 1.25;
    c3 += ratio < 1.25 * 1.25 * 1.25;
    ++m.n;
  }
  m.abs_rel /= m.n;
  m.sq_rel /= m.n;
  m.rmse = std::sqrt(se / m.n);
  m.d1 = 100.0 * c1 / m.n;
  m.d2 = 100.0 * c2 / m.n;
  m.d3 = 100.0 * c3 / m.n;
  return m;
}

// ---- aggregation recursion, written out for three scales ----

// F1 = A1(D1) * D1; u_s = D_s + P_s(up(F_{s-1})); F_s = A_s(u_s) * u_s
template <typename AttnFn>
Map pfaa3(const Map& d1, const Map& d2, const Map& d3, const std::vector<double>& p2, const std::vector<double>& p3,
          AttnFn attn) {
  auto gate = [](const Map& a, const Map& x) {
    Map out = x;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] * x.v[i];
    return out;
  };
  auto plus = [](const Map& a, const Map& b) {
    Map out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
  };
  const Map f1 = gate(attn(1, d1), d1);
  const Map u2 = plus(d2, conv1x1(upsample2x(f1), p2, d2.c));
  const Map f2 = gate(attn(2, u2), u2);
  const Map u3 = plus(d3, conv1x1(upsample2x(f2), p3, d3.c));
  return gate(attn(3, u3), u3);
}

// channel attention: mean pool -> linear -> silu -> linear -> sigmoid, broadcast
inline Map acs(const Map& x, const std::vector<double>& w1, const std::vector<double>& b1,
               const std::vector<double>& w2, const std::vector<double>& b2, int r) {
  std::vector<double> pooled(x.c, 0.0);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int p = 0; p < x.h * x.w; ++p) pooled[ch] += x.v[std::size_t(ch) * x.h * x.w + p];
    pooled[ch] /= x.h * x.w;
  }
  std::vector<double> hid(r);
  for (int j = 0; j < r; ++j) {
    double s = b1[j];
    for (int ch = 0; ch < x.c; ++ch) s += pooled[ch] * w1[std::size_t(ch) * r + j];
    hid[j] = s / (1.0 + std::exp(-s));
  }
  Map out(x.c, x.h, x.w);
  for (int ch = 0; ch < x.c; ++ch) {
    double s = b2[ch];
    for (int j = 0; j < r; ++j) s += hid[j] * w2[std::size_t(j) * x.c + ch];
    const double g = 1.0 / (1.0 + std::exp(-s));
    for (int p = 0; p < x.h * x.w; ++p) out.v[std::size_t(ch) * x.h * x.w + p] = g;
  }
  return out;
}

}  // namespace oracle
