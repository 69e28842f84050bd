#pragma once

// Small dense Levenberg-Marquardt with a central-difference Jacobian.

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace bexg::detail {

struct LmOptions {
    int max_iterations = 500;
    double tolerance = 1e-12;  // relative change in rss and in parameters
};

struct LmResult {
    Eigen::VectorXd params;
    double rss = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

/// `residuals(p, r)` fills r (size n) for parameters p; non-finite residuals
/// reject the step.
template <class Residuals>
LmResult levenberg_marquardt(Residuals&& residuals, Eigen::VectorXd p, Eigen::Index n, const LmOptions& opt = {}) {
    const Eigen::Index k = p.size();
    Eigen::VectorXd r(n), r_try(n), r_hi(n), r_lo(n);
    auto rss_of = [&](const Eigen::VectorXd& q, Eigen::VectorXd& out) {
        residuals(q, out);
        const double s = out.squaredNorm();
        return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    };
    LmResult res;
    double rss = rss_of(p, r);
    if (!std::isfinite(rss)) {
        res.params = p;
        return res;
    }
    double lambda = 1e-3;
    Eigen::MatrixXd J(n, k);
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it + 1;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double h = 1e-7 * std::max(1.0, std::abs(p[j]));
            Eigen::VectorXd q = p;
            q[j] = p[j] + h;
            residuals(q, r_hi);
            q[j] = p[j] - h;
            residuals(q, r_lo);
            J.col(j) = (r_hi - r_lo) / (2 * h);
        }
        if (!J.allFinite()) break;
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::MatrixXd A = JtJ;
            A.diagonal() += lambda * (JtJ.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd step = A.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10;
                continue;
            }
            const Eigen::VectorXd p_try = p + step;
            const double rss_try = rss_of(p_try, r_try);
            if (rss_try < rss) {
                const double drss = (rss - rss_try) / std::max(rss, 1e-300);
                const double dp = step.norm() / std::max(p.norm(), 1e-12);
                p = p_try;
                r = r_try;
                rss = rss_try;
                lambda = std::max(lambda / 10, 1e-15);
                improved = true;
                if (drss < opt.tolerance || dp < opt.tolerance) res.converged = true;
                break;
            }
            lambda *= 10;
        }
        if (!improved) {
            res.converged = true;  // no downhill step left at any damping
            break;
        }
        if (res.converged || rss == 0) {
            res.converged = true;
            break;
        }
    }
    res.params = p;
    res.rss = rss;
    return res;
}

}  // namespace bexg::detail
