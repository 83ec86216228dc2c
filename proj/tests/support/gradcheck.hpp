#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unlearn/ops.hpp"
#include "unlearn/tensor.hpp"

namespace testsupport {

// Central finite-difference oracle for reverse-mode gradients. The builder
// must be a pure function of the leaf values. Returns the worst relative
// error across all leaf elements.
struct GradCheck {
    double eps = 1e-5;
    double max_rel_err = 0.0;

    static double rel_err(double analytic, double numeric) {
        const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
        return std::abs(analytic - numeric) / denom;
    }

    double run(const std::function<unlearn::Tensor(const std::vector<unlearn::Tensor>&)>& build,
               std::vector<unlearn::Tensor> leaves) {
        for (auto& leaf : leaves) {
            leaf.set_requires_grad(true);
            leaf.zero_grad();
        }
        std::vector<Eigen::ArrayXd> analytic;
        {
            unlearn::Graph tape;
            unlearn::GraphScope scope(tape);
            unlearn::Tensor loss = build(leaves);
            unlearn::backward(loss);
        }
        for (auto& leaf : leaves) {
            analytic.push_back(leaf.has_grad() ? leaf.grad() : Eigen::ArrayXd::Zero(leaf.size()));
        }

        max_rel_err = 0.0;
        for (std::size_t l = 0; l < leaves.size(); ++l) {
            auto& vals = leaves[l].values();
            for (Eigen::Index i = 0; i < vals.size(); ++i) {
                const double saved = vals[i];
                vals[i] = saved + eps;
                const double up = build(leaves).value();
                vals[i] = saved - eps;
                const double down = build(leaves).value();
                vals[i] = saved;
                const double numeric = (up - down) / (2.0 * eps);
                max_rel_err = std::max(max_rel_err, rel_err(analytic[l][i], numeric));
            }
        }
        return max_rel_err;
    }
};

// Fixed random leaf away from ReLU/clamp kinks: |values| >= margin.
inline unlearn::Tensor random_leaf(unlearn::Rng& rng, unlearn::Shape shape, double margin = 0.0) {
    Eigen::ArrayXd v(unlearn::numel(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        double x = rng.uniform(-1.0, 1.0);
        if (margin > 0.0 && std::abs(x) < margin) x = (x >= 0.0 ? margin : -margin) + x;
        v[i] = x;
    }
    return unlearn::Tensor(std::move(shape), std::move(v));
}

// Scalar projection of an arbitrary op output so gradients are well mixed:
// sum(out * fixed_coefficients).
inline unlearn::Tensor project(const unlearn::Tensor& out, unsigned coeff_seed) {
    unlearn::Rng rng(0xC0FFEEULL + coeff_seed);
    Eigen::ArrayXd c(out.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = rng.uniform(-1.0, 1.0);
    unlearn::Tensor coeffs(out.shape(), std::move(c));
    return unlearn::sum(unlearn::mul(out, coeffs));
}

} // namespace testsupport
