// Test-only reference implementations, independent of the library's
// computation paths. Expected values asserted in the test files were
// produced by these oracles.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sncl/tensor.hpp"

namespace oracle {

// Naive triple-loop matrix product.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = s;
        }
    }
    return c;
}

// Central difference of f with respect to param[i]; f must recompute the
// value from scratch on every call.
inline double central_diff(const std::function<double()>& f, const sncl::TensorPtr& param,
                           std::size_t i, double h = 1e-5) {
    const double saved = param->data[i];
    param->data[i] = saved + h;
    const double fp = f();
    param->data[i] = saved - h;
    const double fm = f();
    param->data[i] = saved;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / (std::abs(want) + 1e-8);
}

// Compares every accumulated gradient of `param` against central
// differences of `f`; returns the worst relative error.
inline double max_grad_rel_err(const std::function<double()>& f, const sncl::TensorPtr& param,
                               double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < param->data.size(); ++i) {
        const double fd = central_diff(f, param, i, h);
        const double an = param->grad.empty() ? 0.0 : param->grad[i];
        worst = std::max(worst, rel_err(an, fd));
    }
    return worst;
}

} // namespace oracle
