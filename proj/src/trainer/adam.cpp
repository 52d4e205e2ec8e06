#include "unlearn/adam.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "unlearn/error.hpp"

namespace unlearn {

double global_grad_norm(std::span<const NamedParameter> params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.grad().values()) total += g * g;
  }
  return std::sqrt(total);
}

double adam_step(std::span<NamedParameter> params, AdamState& state, const AdamOptions& options) {
  for (const auto& p : params) {
    if (p.value.has_grad() && !p.value.grad().all_finite()) {
      throw NumericError(static_cast<long>(state.step),
                         fmt::format("non-finite gradient in parameter '{}'", p.name));
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape(), 0.0);
      state.v.emplace_back(p.value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::kCompatibility, "optimizer state does not match the parameter list");
  }

  const double norm = global_grad_norm(params);
  double scale = 1.0;
  if (options.clip_norm && norm > *options.clip_norm) scale = *options.clip_norm / norm;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var& var = params[k].value;
    if (!var.requires_grad()) continue;
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    if (m.size() != var.size()) {
      fail(ErrorKind::kCompatibility,
           fmt::format("optimizer state shape mismatch for '{}'", params[k].name));
    }
    const std::span<const double> grad =
        var.has_grad() ? std::as_const(var).grad().values() : std::span<const double>();
    auto w = var.mutable_value().values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * scale;
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      w[i] -= options.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + options.eps);
    }
  }
  return norm;
}

}  // namespace unlearn
