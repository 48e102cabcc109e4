// Central finite-difference gradient oracle. Kept independent of the
// autodiff tape: it re-evaluates a loss closure with perturbed buffers.
#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/tensor.hpp"

namespace avseg::test {

struct GradCheckResult {
  bool ok = true;
  double worst_rel_err = 0.0;
  std::string detail;
};

// Compares an analytic gradient against (f(x+h) - f(x-h)) / 2h elementwise.
// `loss` must recompute the scalar objective from current buffer contents.
inline GradCheckResult check_gradient(std::vector<double>& buffer,
                                      const Tensor& analytic,
                                      const std::function<double()>& loss,
                                      double h = 1e-5, double rel_tol = 1e-4,
                                      double abs_tol = 1e-7) {
  GradCheckResult res;
  if (static_cast<size_t>(analytic.size()) != buffer.size()) {
    res.ok = false;
    res.detail = "analytic gradient size mismatch";
    return res;
  }
  for (size_t i = 0; i < buffer.size(); ++i) {
    double keep = buffer[i];
    buffer[i] = keep + h;
    double fp = loss();
    buffer[i] = keep - h;
    double fm = loss();
    buffer[i] = keep;
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic[static_cast<long>(i)];
    double diff = std::abs(a - numeric);
    if (diff <= abs_tol) continue;
    double rel = diff / (std::abs(a) + std::abs(numeric));
    res.worst_rel_err = std::max(res.worst_rel_err, rel);
    if (rel > rel_tol) {
      res.ok = false;
      std::ostringstream os;
      os << "index " << i << ": analytic " << a << " vs numeric " << numeric
         << " (rel err " << rel << ")";
      res.detail = os.str();
      return res;
    }
  }
  return res;
}

}  // namespace avseg::test
