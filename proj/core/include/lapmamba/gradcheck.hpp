#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lapmamba/tensor.hpp"

namespace lapmamba::gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares tape gradients of the scalar loss_fn() against central finite
// differences (step h) for every element of every tensor in `wrt`, which must
// be the same storage loss_fn reads. Relative error is
// |analytic - numeric| / max(1, |analytic| + |numeric|).
double max_rel_error(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& wrt,
                     double h = 1e-5);

// The standard block-by-block suite on small randomized shapes: conv, linear,
// layer_norm, GFFN, VSSM, LSRB, MDFM, HDEB, and the composite loss.
std::vector<CheckResult> run_suite(std::uint64_t seed = 7, double tol = 1e-4);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace lapmamba::gradcheck
