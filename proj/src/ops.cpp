#include "cross360/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "cross360/error.hpp"

namespace cross360::nn {

namespace {

// Gradient buffer of parent i, or nullptr when that parent needs none.
double* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->ensure_grad().data();
}

const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto in = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(name, a.shape(), std::move(out), {a}, [deriv](Node& self) {
    double* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = parent_value(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  return make_result("sum", {}, {total}, {a}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += a.value()[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("weighted_sum", {}, {total}, {a}, [w = std::move(w)](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(a.value().begin(), a.value().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int n = a.dim(0);
  const int m = a.dim(1);
  std::vector<double> out(a.numel());
  const auto in = a.value();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j) * n + i] = in[static_cast<std::size_t>(i) * m + j];
  }
  return make_result("transpose", {m, n}, std::move(out), {a}, [n, m](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        g[static_cast<std::size_t>(i) * m + j] += self.grad[static_cast<std::size_t>(j) * n + i];
      }
    }
  });
}

namespace {

// out[n, m] (+)= a[n, k] * b[k, m]
void gemm_nn(const double* a, const double* b, double* out, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    double* row = out + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

// Shared backward for y = a b (+ bias broadcast over rows).
void matmul_backward(Node& self, int n, int k, int m) {
  const auto& av = parent_value(self, 0);
  const auto& bv = parent_value(self, 1);
  const double* g = self.grad.data();
  if (double* ga = parent_grad(self, 0)) {
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* brow = bv.data() + static_cast<std::size_t>(p) * m;
        const double* grow = g + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
        ga[static_cast<std::size_t>(i) * k + p] += acc;
      }
    }
  }
  if (double* gb = parent_grad(self, 1)) {
    for (int i = 0; i < n; ++i) {
      const double* grow = g + static_cast<std::size_t>(i) * m;
      for (int p = 0; p < k; ++p) {
        const double a_ip = av[static_cast<std::size_t>(i) * k + p];
        double* gbrow = gb + static_cast<std::size_t>(p) * m;
        for (int j = 0; j < m; ++j) gbrow[j] += a_ip * grow[j];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const int n = a.dim(0);
  const int k = a.dim(1);
  const int m = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  gemm_nn(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_result("matmul", {n, m}, std::move(out), {a, b},
                     [n, k, m](Node& self) { matmul_backward(self, n, k, m); });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("linear input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  }
  const int n = x.dim(0);
  const int k = x.dim(1);
  const int m = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m)) {
    throw ShapeError("linear bias " + shape_string(b.shape()) + " for output width " + std::to_string(m));
  }
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  if (b.defined()) {
    for (int i = 0; i < n; ++i) std::copy(b.value().begin(), b.value().end(), out.begin() + static_cast<std::size_t>(i) * m);
  }
  gemm_nn(x.value().data(), w.value().data(), out.data(), n, k, m);
  return make_result("linear", {n, m}, std::move(out), {x, w, b}, [n, k, m](Node& self) {
    matmul_backward(self, n, k, m);
    if (double* gb = parent_grad(self, 2)) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gb[j] += self.grad[static_cast<std::size_t>(i) * m + j];
      }
    }
  });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const int n = x.dim(0);
  const int m = x.dim(1);
  std::vector<double> out(x.numel());
  const auto in = x.value();
  for (int i = 0; i < n; ++i) {
    const double* row = in.data() + static_cast<std::size_t>(i) * m;
    double* dst = out.data() + static_cast<std::size_t>(i) * m;
    const double mx = *std::max_element(row, row + m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (int j = 0; j < m; ++j) dst[j] /= total;
  }
  return make_result("softmax_rows", x.shape(), std::move(out), {x}, [n, m](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i) {
      const double* y = self.value.data() + static_cast<std::size_t>(i) * m;
      const double* gy = self.grad.data() + static_cast<std::size_t>(i) * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += y[j] * gy[j];
      for (int j = 0; j < m; ++j) g[static_cast<std::size_t>(i) * m + j] += y[j] * (gy[j] - dot);
    }
  });
}

namespace {

// Copies columns [h*hd, (h+1)*hd) of the selected rows into a dense [rows, hd] block.
std::vector<double> pack_head(std::span<const double> src, int d, int hd, int head,
                              const std::vector<int>& rows) {
  std::vector<double> out(rows.size() * hd);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* from = src.data() + static_cast<std::size_t>(rows[r]) * d + head * hd;
    std::copy(from, from + hd, out.begin() + r * hd);
  }
  return out;
}


// Same block stored transposed, [hd, rows], so key loops run over contiguous memory.
std::vector<double> pack_head_transposed(std::span<const double> src, int d, int hd, int head,
                                         const std::vector<int>& rows) {
  const std::size_t n = rows.size();
  std::vector<double> out(n * hd);
  for (std::size_t r = 0; r < n; ++r) {
    const double* from = src.data() + static_cast<std::size_t>(rows[r]) * d + head * hd;
    for (int t = 0; t < hd; ++t) out[t * n + r] = from[t];
  }
  return out;
}

// In-place exp for arguments <= 0 (softmax rows after max subtraction).
// Polynomial form so the loop vectorizes; agrees with std::exp to a few ulp.
void exp_nonpositive(double* __restrict x, int n) {
  constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52, rounds to nearest
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  for (int j = 0; j < n; ++j) {
    const double v = std::max(x[j], -700.0);
    double kd = v * kLog2e + kShifter;
    const auto k = std::bit_cast<std::int64_t>(kd);
    kd -= kShifter;
    const double r = (v - kd * kLn2Hi) - kd * kLn2Lo;
    double p = 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    x[j] = std::bit_cast<double>(std::bit_cast<std::int64_t>(p) + (k << 52));
  }
}

constexpr int kQueryTile = 4;

// logits[r][j] = scale * sum_t q[r][t] * k_t[t][j] for kQueryTile rows of q
// (rows beyond `rows` read as zero). k_t is [HD, nk]; logits is [kQueryTile, nk].
template <int HD>
void tile_logits(const double* q, int rows, const double* k_t, int nk, double scale, double* logits) {
  double qs[kQueryTile][HD] = {};
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < HD; ++t) qs[r][t] = q[r * HD + t] * scale;
  }
  for (int j = 0; j < nk; ++j) {
    double kj[HD];
    for (int t = 0; t < HD; ++t) kj[t] = k_t[static_cast<std::size_t>(t) * nk + j];
    for (int r = 0; r < kQueryTile; ++r) {
      double acc = 0.0;
      for (int t = 0; t < HD; ++t) acc += qs[r][t] * kj[t];
      logits[static_cast<std::size_t>(r) * nk + j] = acc;
    }
  }
}

void tile_logits_any(const double* q, int rows, const double* k_t, int nk, int hd, double scale,
                     double* logits) {
  switch (hd) {
    case 2: return tile_logits<2>(q, rows, k_t, nk, scale, logits);
    case 4: return tile_logits<4>(q, rows, k_t, nk, scale, logits);
    case 8: return tile_logits<8>(q, rows, k_t, nk, scale, logits);
    case 16: return tile_logits<16>(q, rows, k_t, nk, scale, logits);
    case 12: return tile_logits<12>(q, rows, k_t, nk, scale, logits);
    case 24: return tile_logits<24>(q, rows, k_t, nk, scale, logits);
    case 32: return tile_logits<32>(q, rows, k_t, nk, scale, logits);
    case 48: return tile_logits<48>(q, rows, k_t, nk, scale, logits);
    case 64: return tile_logits<64>(q, rows, k_t, nk, scale, logits);
    default: break;
  }
  std::fill(logits, logits + static_cast<std::size_t>(kQueryTile) * nk, 0.0);
  for (int r = 0; r < rows; ++r) {
    double* l = logits + static_cast<std::size_t>(r) * nk;
    for (int t = 0; t < hd; ++t) {
      const double qt = q[r * hd + t] * scale;
      const double* kt = k_t + static_cast<std::size_t>(t) * nk;
      for (int j = 0; j < nk; ++j) l[j] += qt * kt[j];
    }
  }
}

// out[r][t] = sum_j w[r][j] * v[j][t]; w is [kQueryTile, nk], v is [nk, HD].
template <int HD>
void tile_weighted_rows(const double* w, const double* v, int nk, double* out) {
  double acc[kQueryTile][HD] = {};
  for (int j = 0; j < nk; ++j) {
    const double* vj = v + static_cast<std::size_t>(j) * HD;
    for (int r = 0; r < kQueryTile; ++r) {
      const double wr = w[static_cast<std::size_t>(r) * nk + j];
      for (int t = 0; t < HD; ++t) acc[r][t] += wr * vj[t];
    }
  }
  for (int r = 0; r < kQueryTile; ++r) {
    for (int t = 0; t < HD; ++t) out[r * HD + t] = acc[r][t];
  }
}

void tile_weighted_rows_any(const double* w, const double* v, int nk, int hd, double* out) {
  switch (hd) {
    case 2: return tile_weighted_rows<2>(w, v, nk, out);
    case 4: return tile_weighted_rows<4>(w, v, nk, out);
    case 8: return tile_weighted_rows<8>(w, v, nk, out);
    case 16: return tile_weighted_rows<16>(w, v, nk, out);
    case 12: return tile_weighted_rows<12>(w, v, nk, out);
    case 24: return tile_weighted_rows<24>(w, v, nk, out);
    case 32: return tile_weighted_rows<32>(w, v, nk, out);
    case 48: return tile_weighted_rows<48>(w, v, nk, out);
    case 64: return tile_weighted_rows<64>(w, v, nk, out);
    default: break;
  }
  std::fill(out, out + kQueryTile * hd, 0.0);
  for (int j = 0; j < nk; ++j) {
    const double* vj = v + static_cast<std::size_t>(j) * hd;
    for (int r = 0; r < kQueryTile; ++r) {
      const double wr = w[static_cast<std::size_t>(r) * nk + j];
      for (int t = 0; t < hd; ++t) out[r * hd + t] += wr * vj[t];
    }
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double logit_scale,
                 const std::vector<std::uint8_t>* key_mask) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const int n_q = q.dim(0);
  const int n_kv = k.dim(0);
  const int d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != n_kv) {
    throw ShapeError("attention q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                     ", v " + shape_string(v.shape()));
  }
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("attention width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (key_mask && key_mask->size() != static_cast<std::size_t>(n_kv)) {
    throw ShapeError("attention key mask length mismatch");
  }
  const int hd = d / heads;
  std::vector<int> keys;
  keys.reserve(n_kv);
  for (int j = 0; j < n_kv; ++j) {
    if (!key_mask || (*key_mask)[j]) keys.push_back(j);
  }
  std::vector<int> queries(n_q);
  for (int i = 0; i < n_q; ++i) queries[i] = i;
  const int nk = static_cast<int>(keys.size());

  std::vector<double> out(static_cast<std::size_t>(n_q) * d, 0.0);
  std::vector<double> lse(static_cast<std::size_t>(heads) * n_q, 0.0);
  std::vector<double> probs(static_cast<std::size_t>(kQueryTile) * nk);
  std::vector<double> acc(static_cast<std::size_t>(kQueryTile) * hd);
  for (int h = 0; h < heads && nk > 0; ++h) {
    const auto qh = pack_head(q.value(), d, hd, h, queries);
    const auto k_t = pack_head_transposed(k.value(), d, hd, h, keys);
    const auto vh = pack_head(v.value(), d, hd, h, keys);
    for (int i0 = 0; i0 < n_q; i0 += kQueryTile) {
      const int rows = std::min(kQueryTile, n_q - i0);
      tile_logits_any(qh.data() + static_cast<std::size_t>(i0) * hd, rows, k_t.data(), nk, hd, logit_scale,
                      probs.data());
      double total[kQueryTile] = {};
      double mx[kQueryTile] = {};
      for (int r = 0; r < kQueryTile; ++r) {
        double* pr = probs.data() + static_cast<std::size_t>(r) * nk;
        mx[r] = *std::max_element(pr, pr + nk);
        for (int j = 0; j < nk; ++j) pr[j] -= mx[r];
        exp_nonpositive(pr, nk);
        for (int j = 0; j < nk; ++j) total[r] += pr[j];
      }
      tile_weighted_rows_any(probs.data(), vh.data(), nk, hd, acc.data());
      for (int r = 0; r < rows; ++r) {
        double* dst = out.data() + static_cast<std::size_t>(i0 + r) * d + h * hd;
        for (int t = 0; t < hd; ++t) dst[t] = acc[static_cast<std::size_t>(r) * hd + t] / total[r];
        lse[static_cast<std::size_t>(h) * n_q + i0 + r] = mx[r] + std::log(total[r]);
      }
    }
  }

  return make_result(
      "attention", {n_q, d}, std::move(out), {q, k, v},
      [heads, hd, d, n_q, logit_scale, keys = std::move(keys), queries = std::move(queries),
       lse = std::move(lse)](Node& self) {
        double* gq = parent_grad(self, 0);
        double* gk = parent_grad(self, 1);
        double* gv = parent_grad(self, 2);
        const int nk = static_cast<int>(keys.size());
        if (nk == 0) return;
        std::vector<double> probs(static_cast<std::size_t>(kQueryTile) * nk);
        std::vector<double> dscore(static_cast<std::size_t>(kQueryTile) * nk);
        std::vector<double> dq(static_cast<std::size_t>(kQueryTile) * hd);
        for (int h = 0; h < heads; ++h) {
          const auto qh = pack_head(self.parents[0]->value, d, hd, h, queries);
          const auto kh = pack_head(self.parents[1]->value, d, hd, h, keys);
          const auto k_t = pack_head_transposed(self.parents[1]->value, d, hd, h, keys);
          const auto v_t = pack_head_transposed(self.parents[2]->value, d, hd, h, keys);
          const auto go = pack_head(self.grad, d, hd, h, queries);
          const auto oh = pack_head(self.value, d, hd, h, queries);
          std::vector<double> dk(static_cast<std::size_t>(nk) * hd, 0.0);
          std::vector<double> dv(static_cast<std::size_t>(nk) * hd, 0.0);
          for (int i0 = 0; i0 < n_q; i0 += kQueryTile) {
            const int rows = std::min(kQueryTile, n_q - i0);
            const double* qi = qh.data() + static_cast<std::size_t>(i0) * hd;
            const double* gi = go.data() + static_cast<std::size_t>(i0) * hd;
            tile_logits_any(qi, rows, k_t.data(), nk, hd, logit_scale, probs.data());
            // dscore starts as dO . v_j, the gradient of each attention weight
            tile_logits_any(gi, rows, v_t.data(), nk, hd, 1.0, dscore.data());
            for (int r = 0; r < kQueryTile; ++r) {
              double* pr = probs.data() + static_cast<std::size_t>(r) * nk;
              double* dr = dscore.data() + static_cast<std::size_t>(r) * nk;
              if (r >= rows) {
                std::fill(pr, pr + nk, 0.0);
                std::fill(dr, dr + nk, 0.0);
                continue;
              }
              const double row_lse = lse[static_cast<std::size_t>(h) * n_q + i0 + r];
              const double* oi = oh.data() + static_cast<std::size_t>(i0 + r) * hd;
              double delta = 0.0;
              for (int t = 0; t < hd; ++t) delta += gi[r * hd + t] * oi[t];
              for (int j = 0; j < nk; ++j) pr[j] -= row_lse;
              exp_nonpositive(pr, nk);
              for (int j = 0; j < nk; ++j) dr[j] = pr[j] * (dr[j] - delta) * logit_scale;
            }
            if (gq) {
              tile_weighted_rows_any(dscore.data(), kh.data(), nk, hd, dq.data());
              for (int r = 0; r < rows; ++r) {
                double* dst = gq + static_cast<std::size_t>(i0 + r) * d + h * hd;
                for (int t = 0; t < hd; ++t) dst[t] += dq[static_cast<std::size_t>(r) * hd + t];
              }
            }
            for (int j = 0; j < nk; ++j) {
              double* dkj = dk.data() + static_cast<std::size_t>(j) * hd;
              double* dvj = dv.data() + static_cast<std::size_t>(j) * hd;
              for (int r = 0; r < rows; ++r) {
                const double ds = dscore[static_cast<std::size_t>(r) * nk + j];
                const double p = probs[static_cast<std::size_t>(r) * nk + j];
                const double* qr = qi + r * hd;
                const double* gr = gi + r * hd;
                for (int t = 0; t < hd; ++t) {
                  dkj[t] += ds * qr[t];
                  dvj[t] += p * gr[t];
                }
              }
            }
          }
          for (int j = 0; j < nk; ++j) {
            const std::size_t row = static_cast<std::size_t>(keys[j]) * d + h * hd;
            for (int t = 0; t < hd; ++t) {
              if (gk) gk[row + t] += dk[static_cast<std::size_t>(j) * hd + t];
              if (gv) gv[row + t] += dv[static_cast<std::size_t>(j) * hd + t];
            }
          }
        }
      });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const int h = parts.front().dim(1);
  const int w = parts.front().dim(2);
  int channels = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) {
      throw ShapeError("concat_channels spatial mismatch: " + shape_string(p.shape()) + " vs " +
                       shape_string(parts.front().shape()));
    }
    channels += p.dim(0);
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(channels) * h * w);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_result("concat_channels", {channels, h, w}, std::move(out), parts,
                     [sizes = std::move(sizes)](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < sizes.size(); ++p) {
                         if (double* g = parent_grad(self, p)) {
                           for (std::size_t i = 0; i < sizes[p]; ++i) g[i] += self.grad[offset + i];
                         }
                         offset += sizes[p];
                       }
                     });
}

namespace {

int pad_index(int i, int n, Padding mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case Padding::Circular: return ((i % n) + n) % n;
    case Padding::Replicate: return std::clamp(i, 0, n - 1);
    case Padding::Zero: return -1;
  }
  return -1;
}

// For each of the 9 taps and each output pixel, the source pixel or -1.
std::vector<int> conv_taps(int h, int w, ConvPadding padding) {
  std::vector<int> taps(static_cast<std::size_t>(9) * h * w);
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) {
      int* dst = taps.data() + static_cast<std::size_t>(ky * 3 + kx) * h * w;
      for (int r = 0; r < h; ++r) {
        const int sr = pad_index(r + ky - 1, h, padding.vertical);
        for (int c = 0; c < w; ++c) {
          const int sc = pad_index(c + kx - 1, w, padding.horizontal);
          dst[r * w + c] = (sr < 0 || sc < 0) ? -1 : sr * w + sc;
        }
      }
    }
  }
  return taps;
}

}  // namespace

Tensor conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias, ConvPadding padding) {
  require_rank(x, 3, "conv3x3");
  require_rank(kernel, 4, "conv3x3 kernel");
  const int c_in = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  const int c_out = kernel.dim(0);
  if (kernel.dim(1) != c_in || kernel.dim(2) != 3 || kernel.dim(3) != 3) {
    throw ShapeError("conv3x3 kernel " + shape_string(kernel.shape()) + " for input " +
                     shape_string(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv3x3 bias " + shape_string(bias.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  auto taps = conv_taps(h, w, padding);
  std::vector<double> out(static_cast<std::size_t>(c_out) * hw, 0.0);
  const auto xv = x.value();
  const auto kv = kernel.value();
  for (int co = 0; co < c_out; ++co) {
    double* dst = out.data() + co * hw;
    if (bias.defined()) std::fill(dst, dst + hw, bias.value()[co]);
    for (int ci = 0; ci < c_in; ++ci) {
      const double* src = xv.data() + ci * hw;
      for (int t = 0; t < 9; ++t) {
        const double kw = kv[(static_cast<std::size_t>(co) * c_in + ci) * 9 + t];
        const int* tap = taps.data() + t * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          if (tap[p] >= 0) dst[p] += kw * src[tap[p]];
        }
      }
    }
  }
  return make_result(
      "conv3x3", {c_out, h, w}, std::move(out), {x, kernel, bias},
      [c_in, c_out, hw, taps = std::move(taps)](Node& self) {
        const auto& xv = parent_value(self, 0);
        const auto& kv = parent_value(self, 1);
        double* gx = parent_grad(self, 0);
        double* gk = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        for (int co = 0; co < c_out; ++co) {
          const double* g = self.grad.data() + co * hw;
          if (gb) {
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p) acc += g[p];
            gb[co] += acc;
          }
          for (int ci = 0; ci < c_in; ++ci) {
            const double* src = xv.data() + ci * hw;
            double* gsrc = gx ? gx + ci * hw : nullptr;
            for (int t = 0; t < 9; ++t) {
              const std::size_t kidx = (static_cast<std::size_t>(co) * c_in + ci) * 9 + t;
              const int* tap = taps.data() + t * hw;
              if (gk) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) {
                  if (tap[p] >= 0) acc += g[p] * src[tap[p]];
                }
                gk[kidx] += acc;
              }
              if (gsrc) {
                const double kw = kv[kidx];
                for (std::size_t p = 0; p < hw; ++p) {
                  if (tap[p] >= 0) gsrc[tap[p]] += kw * g[p];
                }
              }
            }
          }
        }
      });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv1x1");
  require_rank(weight, 2, "conv1x1 weight");
  const int h = x.dim(1);
  const int w = x.dim(2);
  if (weight.dim(1) != x.dim(0)) {
    throw ShapeError("conv1x1 weight " + shape_string(weight.shape()) + " for input " +
                     shape_string(x.shape()));
  }
  Tensor flat = reshape(x, {x.dim(0), h * w});
  Tensor y = matmul(weight, flat);
  if (bias.defined()) {
    y = add(y, reshape(broadcast_channels(bias, h, w), {weight.dim(0), h * w}));
  }
  return reshape(y, {weight.dim(0), h, w});
}

namespace {

struct Axis2x {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

// Source taps for bilinear 2x upsampling along one axis (align_corners = false).
Axis2x upsample_axis(int n, bool wrap) {
  Axis2x axis;
  for (int o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    int a = 0;
    int b = 0;
    double f = 0.0;
    if (wrap) {
      const double base = std::floor(src);
      f = src - base;
      a = ((static_cast<int>(base) % n) + n) % n;
      b = (a + 1) % n;
    } else {
      src = std::clamp(src, 0.0, static_cast<double>(n - 1));
      a = static_cast<int>(std::floor(src));
      b = std::min(a + 1, n - 1);
      f = src - a;
    }
    axis.i0.push_back(a);
    axis.i1.push_back(b);
    axis.w0.push_back(1.0 - f);
    axis.w1.push_back(f);
  }
  return axis;
}

}  // namespace

Tensor upsample2x(const Tensor& x) {
  require_rank(x, 3, "upsample2x");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  const int oh = 2 * h;
  const int ow = 2 * w;
  auto rows = std::make_shared<Axis2x>(upsample_axis(h, false));
  auto cols = std::make_shared<Axis2x>(upsample_axis(w, true));
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      const double* r0 = src + static_cast<std::size_t>(rows->i0[r]) * w;
      const double* r1 = src + static_cast<std::size_t>(rows->i1[r]) * w;
      const double wr0 = rows->w0[r];
      const double wr1 = rows->w1[r];
      for (int col = 0; col < ow; ++col) {
        const int a = cols->i0[col];
        const int b = cols->i1[col];
        dst[r * ow + col] = wr0 * (cols->w0[col] * r0[a] + cols->w1[col] * r0[b]) +
                            wr1 * (cols->w0[col] * r1[a] + cols->w1[col] * r1[b]);
      }
    }
  }
  return make_result("upsample2x", {c, oh, ow}, std::move(out), {x},
                     [c, h, w, oh, ow, rows, cols](Node& self) {
                       double* g = parent_grad(self, 0);
                       if (!g) return;
                       for (int ch = 0; ch < c; ++ch) {
                         double* gsrc = g + static_cast<std::size_t>(ch) * h * w;
                         const double* gy = self.grad.data() + static_cast<std::size_t>(ch) * oh * ow;
                         for (int r = 0; r < oh; ++r) {
                           double* r0 = gsrc + static_cast<std::size_t>(rows->i0[r]) * w;
                           double* r1 = gsrc + static_cast<std::size_t>(rows->i1[r]) * w;
                           for (int col = 0; col < ow; ++col) {
                             const double gv = gy[r * ow + col];
                             const int a = cols->i0[col];
                             const int b = cols->i1[col];
                             r0[a] += rows->w0[r] * cols->w0[col] * gv;
                             r0[b] += rows->w0[r] * cols->w1[col] * gv;
                             r1[a] += rows->w1[r] * cols->w0[col] * gv;
                             r1[b] += rows->w1[r] * cols->w1[col] * gv;
                           }
                         }
                       }
                     });
}

Tensor downsample2x(const Tensor& x) {
  require_rank(x, 3, "downsample2x");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("downsample2x needs even sizes, got " + shape_string(x.shape()));
  const int oh = h / 2;
  const int ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    for (int r = 0; r < oh; ++r) {
      for (int col = 0; col < ow; ++col) {
        const double* p = src + static_cast<std::size_t>(2 * r) * w + 2 * col;
        out[(static_cast<std::size_t>(ch) * oh + r) * ow + col] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
    }
  }
  return make_result("downsample2x", {c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int ch = 0; ch < c; ++ch) {
      double* gsrc = g + static_cast<std::size_t>(ch) * h * w;
      for (int r = 0; r < oh; ++r) {
        for (int col = 0; col < ow; ++col) {
          const double gv = 0.25 * self.grad[(static_cast<std::size_t>(ch) * oh + r) * ow + col];
          double* p = gsrc + static_cast<std::size_t>(2 * r) * w + 2 * col;
          p[0] += gv;
          p[1] += gv;
          p[w] += gv;
          p[w + 1] += gv;
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += x.value()[ch * hw + p];
    out[ch] = acc / static_cast<double>(hw);
  }
  return make_result("global_avg_pool", {c}, std::move(out), {x}, [c, hw](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int ch = 0; ch < c; ++ch) {
      const double gv = self.grad[ch] / static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += gv;
    }
  });
}

Tensor broadcast_channels(const Tensor& per_channel, int height, int width) {
  require_rank(per_channel, 1, "broadcast_channels");
  const int c = per_channel.dim(0);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  std::vector<double> out(c * hw);
  for (int ch = 0; ch < c; ++ch) std::fill_n(out.begin() + ch * hw, hw, per_channel.value()[ch]);
  return make_result("broadcast_channels", {c, height, width}, std::move(out), {per_channel},
                     [c, hw](Node& self) {
                       double* g = parent_grad(self, 0);
                       if (!g) return;
                       for (int ch = 0; ch < c; ++ch) {
                         double acc = 0.0;
                         for (std::size_t p = 0; p < hw; ++p) acc += self.grad[ch * hw + p];
                         g[ch] += acc;
                       }
                     });
}

Tensor resample(const Tensor& x, std::shared_ptr<const LinearResampler> op, Shape out_spatial) {
  if (x.rank() < 2) throw ShapeError("resample expects [c, pixels...], got " + shape_string(x.shape()));
  const int c = x.dim(0);
  if (x.numel() != static_cast<std::size_t>(c) * op->input_pixels) {
    throw ShapeError("resample input " + shape_string(x.shape()) + " vs operator input of " +
                     std::to_string(op->input_pixels) + " pixels");
  }
  if (shape_numel(out_spatial) != static_cast<std::size_t>(op->output_pixels)) {
    throw ShapeError("resample output shape " + shape_string(out_spatial) + " vs " +
                     std::to_string(op->output_pixels) + " pixels");
  }
  std::vector<double> out(static_cast<std::size_t>(c) * op->output_pixels);
  op->apply(x.value(), out, c);
  Shape shape{c};
  shape.insert(shape.end(), out_spatial.begin(), out_spatial.end());
  return make_result("resample", std::move(shape), std::move(out), {x}, [op, c](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      op->apply_transpose(self.grad, std::span<double>(g, self.parents[0]->value.size()), c);
    }
  });
}

namespace {

std::array<double, 3> softmax3(std::span<const double> logits) {
  const double mx = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> w{};
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    w[i] = std::exp(logits[i] - mx);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

Tensor switchable_norm(const Tensor& x, const SwitchNormParams& params, double eps) {
  if (x.rank() < 2) throw ShapeError("switchable_norm expects [c, ...], got " + shape_string(x.shape()));
  const int c = x.dim(0);
  const std::size_t n = x.numel() / static_cast<std::size_t>(c);
  if (n < 2) throw ShapeError("switchable_norm needs more than one spatial element");
  if (params.mean_logits.numel() != 3 || params.var_logits.numel() != 3 ||
      params.gamma.numel() != static_cast<std::size_t>(c) || params.beta.numel() != static_cast<std::size_t>(c)) {
    throw ShapeError("switchable_norm parameters do not match " + std::to_string(c) + " channels");
  }
  const auto xv = x.value();
  std::vector<double> mu(c), var(c);
  double mu_layer = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const double* p = xv.data() + ch * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += p[i];
    mu[ch] = acc / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += (p[i] - mu[ch]) * (p[i] - mu[ch]);
    var[ch] = sq / n;
    mu_layer += mu[ch];
  }
  mu_layer /= c;
  double var_layer = 0.0;
  for (double v : xv) var_layer += (v - mu_layer) * (v - mu_layer);
  var_layer /= static_cast<double>(xv.size());

  const auto wm = softmax3(params.mean_logits.value());
  const auto wv = softmax3(params.var_logits.value());
  // batch statistics equal instance statistics at batch size 1
  const double wm_inst = wm[0] + wm[2];
  const double wv_inst = wv[0] + wv[2];

  std::vector<double> mean(c), stdev(c);
  std::vector<double> out(xv.size());
  for (int ch = 0; ch < c; ++ch) {
    mean[ch] = wm_inst * mu[ch] + wm[1] * mu_layer;
    stdev[ch] = std::sqrt(wv_inst * var[ch] + wv[1] * var_layer + eps);
    const double g = params.gamma.value()[ch];
    const double b = params.beta.value()[ch];
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = g * (xv[ch * n + i] - mean[ch]) / stdev[ch] + b;
  }

  return make_result(
      "switchable_norm", x.shape(), std::move(out),
      {x, params.mean_logits, params.var_logits, params.gamma, params.beta},
      [c, n, mu = std::move(mu), var = std::move(var), mu_layer, var_layer, wm, wv, mean = std::move(mean),
       stdev = std::move(stdev)](Node& self) {
        const auto& xv = parent_value(self, 0);
        const auto& gamma = parent_value(self, 3);
        double* gx = parent_grad(self, 0);
        double* gml = parent_grad(self, 1);
        double* gvl = parent_grad(self, 2);
        double* gg = parent_grad(self, 3);
        double* gb = parent_grad(self, 4);
        const double wm_inst = wm[0] + wm[2];
        const double wv_inst = wv[0] + wv[2];
        std::vector<double> d_mean(c), d_var(c);
        double d_mu_layer = 0.0;
        double d_var_layer = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double* g = self.grad.data() + ch * n;
          const double* xc = xv.data() + ch * n;
          const double s = stdev[ch];
          double sum_g = 0.0, sum_gx = 0.0, sum_dxhat = 0.0, sum_dxhat_centered = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double centered = xc[i] - mean[ch];
            sum_g += g[i];
            sum_gx += g[i] * centered / s;
            const double dxhat = g[i] * gamma[ch];
            sum_dxhat += dxhat;
            sum_dxhat_centered += dxhat * centered;
          }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
          d_mean[ch] = -sum_dxhat / s;
          d_var[ch] = -0.5 * sum_dxhat_centered / (s * s * s);
          d_mu_layer += wm[1] * d_mean[ch];
          d_var_layer += wv[1] * d_var[ch];
        }
        if (gx) {
          const double total = static_cast<double>(c) * n;
          for (int ch = 0; ch < c; ++ch) {
            const double* g = self.grad.data() + ch * n;
            const double* xc = xv.data() + ch * n;
            const double d_mu = wm_inst * d_mean[ch];
            const double d_sigma = wv_inst * d_var[ch];
            for (std::size_t i = 0; i < n; ++i) {
              gx[ch * n + i] += g[i] * gamma[ch] / stdev[ch] + d_mu / n + d_mu_layer / total +
                                d_sigma * 2.0 * (xc[i] - mu[ch]) / n +
                                d_var_layer * 2.0 * (xc[i] - mu_layer) / total;
            }
          }
        }
        auto mix_grad = [](const std::array<double, 3>& w, const std::array<double, 3>& dw, double* out) {
          const double dot = w[0] * dw[0] + w[1] * dw[1] + w[2] * dw[2];
          for (int k = 0; k < 3; ++k) out[k] += w[k] * (dw[k] - dot);
        };
        if (gml) {
          std::array<double, 3> dw{};
          for (int ch = 0; ch < c; ++ch) {
            dw[0] += d_mean[ch] * mu[ch];
            dw[1] += d_mean[ch] * mu_layer;
            dw[2] += d_mean[ch] * mu[ch];
          }
          mix_grad(wm, dw, gml);
        }
        if (gvl) {
          std::array<double, 3> dw{};
          for (int ch = 0; ch < c; ++ch) {
            dw[0] += d_var[ch] * var[ch];
            dw[1] += d_var[ch] * var_layer;
            dw[2] += d_var[ch] * var[ch];
          }
          mix_grad(wv, dw, gvl);
        }
      });
}

}  // namespace cross360::nn
