#include "convformer/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer {

namespace {

double eval_scalar(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                   const std::vector<Tensor>& inputs) {
  Tensor out = f(inputs);
  if (!out.defined() || out.numel() != 1) {
    throw std::invalid_argument("finite_diff_gradcheck: f must return a scalar");
  }
  const double v = out.value();
  if (!std::isfinite(v)) {
    throw std::runtime_error("finite_diff_gradcheck: f returned a non-finite value");
  }
  return v;
}

}  // namespace

GradcheckReport finite_diff_gradcheck(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double step, const std::vector<std::string>& names) {
  for (const Tensor& t : inputs) {
    if (t.dtype() != Dtype::F64) {
      throw std::invalid_argument("finite_diff_gradcheck: inputs must be float64");
    }
  }

  // One reverse pass for the analytic gradients.
  std::vector<Tensor> tracked;
  tracked.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor copy = t.detached();
    copy.set_requires_grad(true);
    tracked.push_back(copy);
  }
  {
    Graph graph;
    Tensor loss = f(tracked);
    if (!loss.defined() || loss.numel() != 1) {
      throw std::invalid_argument("finite_diff_gradcheck: f must return a scalar");
    }
    if (!std::isfinite(loss.value())) {
      throw std::runtime_error("finite_diff_gradcheck: f returned a non-finite value");
    }
    graph.backward(loss);
  }

  constexpr double kGuard = 1e-8;
  GradcheckReport report;
  for (std::size_t which = 0; which < tracked.size(); ++which) {
    GradcheckEntry entry;
    entry.input_name = which < names.size() ? names[which] : ("input" + std::to_string(which));
    const std::int64_t n = tracked[which].numel();
    std::vector<Tensor> probe;
    for (const Tensor& t : tracked) probe.push_back(t.detached());
    for (std::int64_t i = 0; i < n; ++i) {
      const double saved = probe[which].data()[i];
      probe[which].mutable_data()[i] = saved + step;
      const double fp = eval_scalar(f, probe);
      probe[which].mutable_data()[i] = saved - step;
      const double fm = eval_scalar(f, probe);
      probe[which].mutable_data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = tracked[which].grad_defined() ? tracked[which].grad()[i] : 0.0;
      const double abs_err = std::abs(analytic - numeric);
      const double rel =
          abs_err / std::max(kGuard, std::abs(analytic) + std::abs(numeric));
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_coord = i;
      }
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_input.push_back(std::move(entry));
  }
  return report;
}

}  // namespace convformer
