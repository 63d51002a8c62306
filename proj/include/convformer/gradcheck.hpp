#pragma once

#include <functional>
#include <string>
#include <vector>

#include "convformer/tensor.hpp"

namespace convformer {

struct GradcheckEntry {
  std::string input_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::int64_t worst_coord = -1;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::vector<GradcheckEntry> per_input;
  bool passed(double tol) const { return max_rel_err < tol; }
};

/// Central-difference check of reverse-mode gradients. `f` must be a
/// deterministic scalar function of the given float64 tensors; it is
/// called with fresh graphs, so it must build its computation from its
/// arguments alone. Relative error uses |a - n| / max(guard, |a| + |n|)
/// with a shared denominator guard of 1e-8.
GradcheckReport finite_diff_gradcheck(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    double step = 1e-6, const std::vector<std::string>& names = {});

}  // namespace convformer
