#pragma once

#include <string>
#include <vector>

namespace convformer {

struct SuiteRow {
  std::string name;
  double value = 0.0;  // max relative error (gradcheck) or max abs error (oracle)
  double tol = 0.0;
  bool pass = false;
};

struct SuiteReport {
  std::vector<SuiteRow> rows;
  bool pass = true;
  double worst = 0.0;

  void add(std::string name, double value, double tol);
  std::string table() const;
};

/// Finite-difference check of every differentiable operation (float64,
/// step 1e-6, tolerance 1e-4, three or more random shapes each) plus the
/// end-to-end tiny pipeline at 1e-3.
SuiteReport run_gradcheck_suite(bool include_pipeline = true);

/// Brute-force equivalence against the naive reference implementations on
/// exhaustive small-extent sweeps: 1e-12 at float64, 1e-5 at float32.
SuiteReport run_oracle_suite();

}  // namespace convformer
