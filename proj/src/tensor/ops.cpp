#include "unlearn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unlearn/error.hpp"

namespace unlearn::ops {
namespace {

Tensor& input_grad(Node& n, std::size_t i) { return n.inputs[i]->grad_slot(); }
bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
const Tensor& input_value(const Node& n, std::size_t i) { return n.inputs[i]->value; }

Tensor checked(Tensor t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(-1, std::string("non-finite value produced by ") + op);
  }
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    fail(ErrorKind::kShape, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(a.shape()));
  }
}

// Unary elementwise op: forward f(x), derivative df(x, y).
template <typename F, typename D>
Var unary(const Var& a, const char* name, F f, D df) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(checked(std::move(out), name), {a}, [df](Node& n) {
    if (!wants(n, 0)) return;
    const Tensor& x = input_value(n, 0);
    Tensor& gx = input_grad(n, 0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += n.grad[i] * df(x[i], n.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(checked(std::move(out), "add"), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      Tensor& g = input_grad(n, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(checked(std::move(out), "sub"), {a, b}, [](Node& n) {
    if (wants(n, 0)) {
      Tensor& g = input_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      Tensor& g = input_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(checked(std::move(out), "mul"), {a, b}, [](Node& n) {
    const Tensor& av = input_value(n, 0);
    const Tensor& bv = input_value(n, 1);
    if (wants(n, 0)) {
      Tensor& g = input_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      Tensor& g = input_grad(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var log1mexp(const Var& a) {
  return unary(
      a, "log1mexp",
      [](double x) {
        return x < -M_LN2 ? std::log1p(-std::exp(x)) : std::log(-std::expm1(x));
      },
      [](double x, double) { return -1.0 / std::expm1(-x); });
}

Var softplus(const Var& a) {
  return unary(
      a, "softplus", [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var clamp_straight_through(const Var& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [](double, double) { return 1.0; });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_result(checked(Tensor::scalar(total), "sum"), {a}, [](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    const double d = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) fail(ErrorKind::kShape, "mean of an empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_result(checked(Tensor::scalar(total * inv), "mean"), {a}, [inv](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    const double d = n.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var gather(const Var& a, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out(Shape{idx.size()});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= a.size()) {
      fail(ErrorKind::kShape, "gather index " + std::to_string(idx[k]) + " out of range " +
                                  std::to_string(a.size()));
    }
    out[k] = a.value()[idx[k]];
  }
  return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += n.grad[k];
  });
}

Var concat(std::span<const Var> parts) {
  std::vector<double> values;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (const auto& p : parts) {
    values.insert(values.end(), p.value().values().begin(), p.value().values().end());
  }
  return make_result(Tensor::vector(std::move(values)), std::move(inputs), [](Node& n) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t len = n.inputs[k]->value.size();
      if (wants(n, k)) {
        Tensor& g = input_grad(n, k);
        for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[offset + i];
      }
      offset += len;
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  if (begin > end || end > rows) {
    fail(ErrorKind::kShape, "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") out of range for " + shape_string(a.shape()));
  }
  const double* src = a.value().data() + begin * cols;
  Tensor out(Shape{end - begin, cols},
             std::vector<double>(src, src + (end - begin) * cols));
  return make_result(std::move(out), {a}, [begin, cols](Node& n) {
    if (!wants(n, 0)) return;
    double* g = input_grad(n, 0).data() + begin * cols;
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

Var row_sum(const Var& a) {
  require_rank(a, 2, "row_sum");
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += a.value().at(r, c);
    out[r] = total;
  }
  return make_result(checked(std::move(out), "row_sum"), {a}, [rows, cols](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += n.grad[r];
    }
  });
}

Var log_softmax(const Var& a) {
  require_rank(a, 2, "log_softmax");
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return make_result(checked(std::move(out), "log_softmax"), {a}, [rows, cols](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = n.grad.data() + r * cols;
      const double* y = n.value.data() + r * cols;
      double* dx = g.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += dy[c];
      for (std::size_t c = 0; c < cols; ++c) dx[c] += dy[c] - std::exp(y[c]) * total;
    }
  });
}

Var pick(const Var& a, std::span<const std::int32_t> columns) {
  require_rank(a, 2, "pick");
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  if (columns.size() != rows) {
    fail(ErrorKind::kShape, "pick: " + std::to_string(columns.size()) + " columns for " +
                                std::to_string(rows) + " rows");
  }
  std::vector<std::int32_t> cs(columns.begin(), columns.end());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (cs[r] < 0 || static_cast<std::size_t>(cs[r]) >= cols) {
      fail(ErrorKind::kVocabulary, "pick: column " + std::to_string(cs[r]) + " out of range " +
                                       std::to_string(cols));
    }
    out[r] = a.value().at(r, cs[r]);
  }
  return make_result(std::move(out), {a}, [cs = std::move(cs)](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    for (std::size_t r = 0; r < cs.size(); ++r) g.at(r, cs[r]) += n.grad[r];
  });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.shape()[0];
  const std::size_t dim = table.shape()[1];
  std::vector<std::int32_t> tokens(ids.begin(), ids.end());
  Tensor out(Shape{tokens.size(), dim});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= vocab) {
      fail(ErrorKind::kVocabulary, "token id " + std::to_string(tokens[t]) +
                                       " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(table.value().data() + tokens[t] * dim, dim, out.data() + t * dim);
  }
  return make_result(std::move(out), {table}, [tokens = std::move(tokens), dim](Node& n) {
    if (!wants(n, 0)) return;
    Tensor& g = input_grad(n, 0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      double* dst = g.data() + tokens[t] * dim;
      const double* src = n.grad.data() + t * dim;
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
  });
}

Var add_rows(const Var& x, const Var& table, std::size_t count) {
  require_rank(x, 2, "add_rows");
  require_rank(table, 2, "add_rows");
  const std::size_t dim = x.shape()[1];
  if (x.shape()[0] != count || count > table.shape()[0] || table.shape()[1] != dim) {
    fail(ErrorKind::kLength, "add_rows: " + std::to_string(count) + " rows exceed table " +
                                 shape_string(table.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < count * dim; ++i) out[i] += table.value()[i];
  return make_result(std::move(out), {x, table}, [count, dim](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      Tensor& g = input_grad(n, k);
      for (std::size_t i = 0; i < count * dim; ++i) g[i] += n.grad[i];
    }
  });
}

namespace {

// y[T,N] = x[T,K] * w[K,N] (+ b[N])
void matmul_forward(const double* x, const double* w, const double* b, double* y, std::size_t rows,
                    std::size_t inner, std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    double* yr = y + t * cols;
    if (b) {
      std::copy_n(b, cols, yr);
    } else {
      std::fill_n(yr, cols, 0.0);
    }
    const double* xr = x + t * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double xv = xr[k];
      const double* wr = w + k * cols;
      for (std::size_t c = 0; c < cols; ++c) yr[c] += xv * wr[c];
    }
  }
}

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t rows = x.shape()[0];
  const std::size_t inner = x.shape()[1];
  const std::size_t cols = weight.shape()[1];
  if (weight.shape()[0] != inner) {
    fail(ErrorKind::kShape, "linear: input " + shape_string(x.shape()) + " vs weight " +
                                shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{cols}) {
    fail(ErrorKind::kShape, "linear: bias " + shape_string(bias.shape()) + " vs " +
                                std::to_string(cols) + " outputs");
  }
  Tensor out(Shape{rows, cols});
  matmul_forward(x.value().data(), weight.value().data(),
                 has_bias ? bias.value().data() : nullptr, out.data(), rows, inner, cols);
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(checked(std::move(out), "linear"), std::move(inputs),
                     [rows, inner, cols](Node& n) {
    const double* dy = n.grad.data();
    if (wants(n, 0)) {
      // dx = dy * w^T, via a transposed copy of w for unit-stride inner loops.
      const double* w = input_value(n, 1).data();
      std::vector<double> wt(inner * cols);
      for (std::size_t k = 0; k < inner; ++k) {
        for (std::size_t c = 0; c < cols; ++c) wt[c * inner + k] = w[k * cols + c];
      }
      double* dx = input_grad(n, 0).data();
      for (std::size_t t = 0; t < rows; ++t) {
        double* dxr = dx + t * inner;
        const double* dyr = dy + t * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = dyr[c];
          const double* wr = wt.data() + c * inner;
          for (std::size_t k = 0; k < inner; ++k) dxr[k] += d * wr[k];
        }
      }
    }
    if (wants(n, 1)) {
      const double* xv = input_value(n, 0).data();
      double* dw = input_grad(n, 1).data();
      for (std::size_t t = 0; t < rows; ++t) {
        const double* dyr = dy + t * cols;
        for (std::size_t k = 0; k < inner; ++k) {
          const double a = xv[t * inner + k];
          double* dwr = dw + k * cols;
          for (std::size_t c = 0; c < cols; ++c) dwr[c] += a * dyr[c];
        }
      }
    }
    if (n.inputs.size() > 2 && wants(n, 2)) {
      double* db = input_grad(n, 2).data();
      for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[t * cols + c];
      }
    }
  });
}

Var linear(const Var& x, const Var& weight) { return linear(x, weight, Var()); }

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.shape()[0];
  const std::size_t dim = x.shape()[1];
  if (gain.shape() != Shape{dim} || bias.shape() != Shape{dim}) {
    fail(ErrorKind::kShape, "layer_norm: gain/bias do not match width " + std::to_string(dim));
  }
  Tensor out(x.shape());
  std::vector<double> xhat(rows * dim);
  std::vector<double> rstd(rows);
  const double* g = gain.value().data();
  const double* b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * dim;
    double mu = 0.0;
    for (std::size_t c = 0; c < dim; ++c) mu += xr[c];
    mu /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t c = 0; c < dim; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(dim);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < dim; ++c) {
      const double h = (xr[c] - mu) * rs;
      xhat[r * dim + c] = h;
      out[r * dim + c] = h * g[c] + b[c];
    }
  }
  return make_result(checked(std::move(out), "layer_norm"), {x, gain, bias},
                     [rows, dim, xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
    const double* dy = n.grad.data();
    if (wants(n, 1)) {
      double* dg = input_grad(n, 1).data();
      for (std::size_t i = 0; i < rows * dim; ++i) dg[i % dim] += dy[i] * xhat[i];
    }
    if (wants(n, 2)) {
      double* db = input_grad(n, 2).data();
      for (std::size_t i = 0; i < rows * dim; ++i) db[i % dim] += dy[i];
    }
    if (wants(n, 0)) {
      const double* g = input_value(n, 1).data();
      double* dx = input_grad(n, 0).data();
      const double inv_dim = 1.0 / static_cast<double>(dim);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0;
        double mean_dh = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = dy[r * dim + c] * g[c];
          mean_d += d;
          mean_dh += d * xhat[r * dim + c];
        }
        mean_d *= inv_dim;
        mean_dh *= inv_dim;
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = dy[r * dim + c] * g[c];
          dx[r * dim + c] += rstd[r] * (d - mean_d - xhat[r * dim + c] * mean_dh);
        }
      }
    }
  });
}

Var gelu(const Var& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kC * (v + kA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      });
}

Var causal_self_attention(const Var& qkv, std::size_t num_heads) {
  require_rank(qkv, 2, "causal_self_attention");
  const std::size_t steps = qkv.shape()[0];
  const std::size_t width3 = qkv.shape()[1];
  if (width3 % 3 != 0 || (width3 / 3) % num_heads != 0) {
    fail(ErrorKind::kShape, "causal_self_attention: width " + std::to_string(width3) +
                                " incompatible with " + std::to_string(num_heads) + " heads");
  }
  const std::size_t width = width3 / 3;
  const std::size_t head_dim = width / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const double* in = qkv.value().data();
  Tensor out(Shape{steps, width});
  // probs[h][t][j] for j <= t, stored densely as [H, T, T].
  std::vector<double> probs(num_heads * steps * steps, 0.0);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t qo = h * head_dim;
    const std::size_t ko = width + h * head_dim;
    const std::size_t vo = 2 * width + h * head_dim;
    for (std::size_t t = 0; t < steps; ++t) {
      double* p = probs.data() + (h * steps + t) * steps;
      const double* q = in + t * width3 + qo;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= t; ++j) {
        const double* k = in + j * width3 + ko;
        double s = 0.0;
        for (std::size_t d = 0; d < head_dim; ++d) s += q[d] * k[d];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      double* o = out.data() + t * width + qo;
      for (std::size_t j = 0; j <= t; ++j) {
        p[j] /= total;
        const double* v = in + j * width3 + vo;
        for (std::size_t d = 0; d < head_dim; ++d) o[d] += p[j] * v[d];
      }
    }
  }
  return make_result(
      checked(std::move(out), "causal_self_attention"), {qkv},
      [steps, width, width3, head_dim, num_heads, scale, probs = std::move(probs)](Node& n) {
        if (!wants(n, 0)) return;
        const double* in = input_value(n, 0).data();
        double* g = input_grad(n, 0).data();
        std::vector<double> dp(steps);
        for (std::size_t h = 0; h < num_heads; ++h) {
          const std::size_t qo = h * head_dim;
          const std::size_t ko = width + h * head_dim;
          const std::size_t vo = 2 * width + h * head_dim;
          for (std::size_t t = 0; t < steps; ++t) {
            const double* p = probs.data() + (h * steps + t) * steps;
            const double* dout = n.grad.data() + t * width + qo;
            double dot = 0.0;
            for (std::size_t j = 0; j <= t; ++j) {
              const double* v = in + j * width3 + vo;
              double* dv = g + j * width3 + vo;
              double s = 0.0;
              for (std::size_t d = 0; d < head_dim; ++d) {
                s += dout[d] * v[d];
                dv[d] += p[j] * dout[d];
              }
              dp[j] = s;
              dot += p[j] * s;
            }
            const double* q = in + t * width3 + qo;
            double* dq = g + t * width3 + qo;
            for (std::size_t j = 0; j <= t; ++j) {
              const double ds = p[j] * (dp[j] - dot) * scale;
              const double* k = in + j * width3 + ko;
              double* dk = g + j * width3 + ko;
              for (std::size_t d = 0; d < head_dim; ++d) {
                dq[d] += ds * k[d];
                dk[d] += ds * q[d];
              }
            }
          }
        }
      });
}

}  // namespace unlearn::ops
