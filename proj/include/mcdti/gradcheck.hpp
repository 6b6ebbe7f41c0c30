#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mcdti/errors.hpp"

namespace mcdti::nn {

// Central-difference gradient verification, meant to run on double
// instantiations of the layers. Register parameter/gradient pairs, run the
// analytic backward once outside, then `run` perturbs each coordinate and
// compares. Relative error uses a small absolute floor so near-zero
// gradients do not blow up the ratio.
class GradCheck {
 public:
  struct Report {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
  };

  void add_param(const std::string& name, std::span<double> value,
                 std::span<const double> analytic_grad) {
    if (value.size() != analytic_grad.size())
      throw DimensionError("GradCheck: value/grad size mismatch for " + name);
    params_.push_back({name, value, analytic_grad});
  }

  // loss() must re-run the forward pass against the current parameter
  // values and must be deterministic (frozen dropout masks, fixed inputs).
  Report run(const std::function<double()>& loss, double epsilon = 1e-4,
             double abs_floor = 1e-6) const {
    Report rep;
    for (const auto& p : params_) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value[i];
        p.value[i] = saved + epsilon;
        const double up = loss();
        p.value[i] = saved - epsilon;
        const double down = loss();
        p.value[i] = saved;
        const double fd = (up - down) / (2.0 * epsilon);
        const double an = p.grad[i];
        const double rel =
            std::abs(fd - an) / std::max({abs_floor, std::abs(fd), std::abs(an)});
        if (rel > rep.max_rel_error) {
          rep.max_rel_error = rel;
          rep.worst_param = p.name;
          rep.worst_index = i;
        }
      }
    }
    return rep;
  }

 private:
  struct Entry {
    std::string name;
    std::span<double> value;
    std::span<const double> grad;
  };
  std::vector<Entry> params_;
};

}  // namespace mcdti::nn
