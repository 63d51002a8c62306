#include "convformer/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer {

std::vector<ParamGroup> make_param_groups(const std::vector<Param>& params, double base_lr) {
  if (base_lr <= 0.0) throw std::invalid_argument("make_param_groups: base_lr must be > 0");
  ParamGroup backbone{"backbone", base_lr * 0.1, {}};
  ParamGroup rest{"rest", base_lr, {}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    (params[i].backbone ? backbone : rest).param_indices.push_back(i);
  }
  return {backbone, rest};
}

AdamW::AdamW(std::vector<Param>& params, std::vector<ParamGroup> groups, AdamWConfig cfg)
    : params_(&params), groups_(std::move(groups)), cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(static_cast<std::size_t>(params[i].tensor.numel()), 0.0);
    v_[i].assign(static_cast<std::size_t>(params[i].tensor.numel()), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const ParamGroup& group : groups_) {
    for (std::size_t idx : group.param_indices) {
      Param& p = (*params_)[idx];
      if (!p.tensor.grad_defined()) {
        throw std::runtime_error("adamw_step: missing gradient for parameter " + p.name);
      }
      const std::vector<double>& g = p.tensor.grad();
      std::vector<double>& w = p.tensor.mutable_data();
      std::vector<double>& m = m_[idx];
      std::vector<double>& v = v_[idx];
      const double decay = 1.0 - group.lr * cfg_.weight_decay;
      const bool round_f32 = p.tensor.dtype() == Dtype::F32;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = g[i];
        double wi = w[i] * decay;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        wi -= group.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        w[i] = round_f32 ? static_cast<double>(static_cast<float>(wi)) : wi;
      }
    }
  }
}

}  // namespace convformer
