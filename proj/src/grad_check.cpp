#include "sky/grad_check.hpp"

#include <cmath>
#include <cstring>

#include "sky/tape.hpp"

namespace sky {

double fd_rel_error(double analytic, double numeric, double f_scale, double eps) {
    // Central differences carry ~u*|f|/eps rounding noise; differences inside
    // that allowance are indistinguishable from exact agreement.
    const double noise = 64.0 * 2.2204460492503131e-16 * std::max(1.0, f_scale) / eps;
    const double diff = std::fabs(analytic - numeric);
    if (diff <= noise) return 0.0;
    return (diff - noise) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double eps, double tol) {
    auto eval = [&](const Tensor& p) -> double {
        const Tensor out = f(p);
        if (out.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
        return out.item();
    };

    // Determinism probe: two evaluations must agree bitwise.
    const Tensor base = point.detached_clone();
    const double f0 = eval(base);
    const double f0b = eval(base);
    if (std::memcmp(&f0, &f0b, sizeof(double)) != 0)
        throw ContractError("grad_check: f is not deterministic (two evaluations differ)");

    // Tape gradient at the point.
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor p = point.detached_clone();
        p.set_requires_grad(true);
        Tensor out = f(p);
        if (out.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
        tape.backward(out);
        analytic = p.has_grad() ? p.grad() : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
    }

    GradCheckReport report;
    report.tol = tol;
    Tensor probe = point.detached_clone();
    const std::int64_t n = probe.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double saved = probe.data()[i];
        probe.data()[i] = saved + eps;
        const double fp = eval(probe);
        probe.data()[i] = saved - eps;
        const double fm = eval(probe);
        probe.data()[i] = saved;

        const double dplus = (fp - f0) / eps;
        const double dminus = (f0 - fm) / eps;
        if (std::fabs(dplus - dminus) > 0.05 * (std::fabs(dplus) + std::fabs(dminus)) + 1e-4) {
            ++report.excluded_nonsmooth;  // kink between the probes
            continue;
        }
        const double central = (fp - fm) / (2.0 * eps);
        const double rel = fd_rel_error(analytic[static_cast<std::size_t>(i)], central,
                                        std::fabs(f0), eps);
        ++report.checked;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

}  // namespace sky
