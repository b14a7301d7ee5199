#include "mesm_checks/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mesm::checks {

GradCheckReport check_gradients(const std::vector<NamedVar>& params, const std::function<ad::Var<double>()>& loss,
                                double eps, std::size_t stride) {
  for (const auto& [name, p] : params) {
    ad::Var<double> v = p;
    v.zero_grad();
  }
  ad::backward(loss());
  std::vector<ad::Matrix<double>> analytic;
  for (const auto& [name, p] : params)
    analytic.push_back(p.has_grad() ? p.grad() : ad::Matrix<double>::Zero(p.rows(), p.cols()));

  ad::NoGradGuard guard;
  GradCheckReport rep;
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Var<double> p = params[k].second;
    double pd = 0.0, pa = 0.0, pn = 0.0;
    for (Eigen::Index i = 0; i < p.value().size(); i += static_cast<Eigen::Index>(std::max<std::size_t>(1, stride))) {
      double& x = p.mutable_value().data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss().item();
      x = saved - eps;
      const double down = loss().item();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      pd += (a - numeric) * (a - numeric);
      pa += a * a;
      pn += numeric * numeric;
      ++rep.entries;
    }
    diff_sq += pd;
    a_sq += pa;
    n_sq += pn;
    const double scale = std::max({std::sqrt(pa), std::sqrt(pn), 1e-12});
    const double err = std::sqrt(pd) / scale;
    // Parameters with negligible gradient get an absolute criterion.
    const double reported = std::max(std::sqrt(pa), std::sqrt(pn)) < 1e-9 ? std::sqrt(pd) : err;
    if (reported > rep.worst_param_error) {
      rep.worst_param_error = reported;
      rep.worst_param = params[k].first;
    }
  }
  rep.analytic_norm = std::sqrt(a_sq);
  rep.rel_error = std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-12});
  return rep;
}

}  // namespace mesm::checks
