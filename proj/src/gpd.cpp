#include "izsd/gpd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"

namespace izsd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_params(const GpdParams& p) {
    if (!p.valid()) {
        throw DomainError("invalid GPD params: sigma=" + std::to_string(p.sigma) +
                          " xi=" + std::to_string(p.xi));
    }
}

}  // namespace

double GpdParams::support_max() const { return xi < 0.0 ? -sigma / xi : kInf; }

bool GpdParams::valid() const {
    return std::isfinite(sigma) && sigma > 0.0 && std::isfinite(xi);
}

double gpd_cdf(double x, const GpdParams& params) {
    check_params(params);
    if (!std::isfinite(x) || x < 0.0) {
        throw DomainError("gpd_cdf: x must be finite and nonnegative");
    }
    if (std::abs(params.xi) < kXiZeroEps) {
        return -std::expm1(-x / params.sigma);
    }
    if (params.xi < 0.0 && x >= params.support_max()) return 1.0;
    const double z = params.xi * x / params.sigma;
    return -std::expm1(-std::log1p(z) / params.xi);
}

double gpd_quantile(double prob, const GpdParams& params) {
    check_params(params);
    if (!(prob >= 0.0 && prob < 1.0)) {
        throw DomainError("gpd_quantile: prob must lie in [0,1)");
    }
    if (std::abs(params.xi) < kXiZeroEps) {
        return -params.sigma * std::log1p(-prob);
    }
    // sigma/xi * ((1-p)^(-xi) - 1)
    return params.sigma / params.xi * std::expm1(-params.xi * std::log1p(-prob));
}

double gpd_log_likelihood(const std::vector<double>& excesses, const GpdParams& params) {
    check_params(params);
    if (excesses.empty()) throw DomainError("gpd_log_likelihood: empty sample");
    const double n = static_cast<double>(excesses.size());
    const double log_sigma = std::log(params.sigma);
    if (std::abs(params.xi) < kXiZeroEps) {
        double sum = 0.0;
        for (double x : excesses) {
            if (!std::isfinite(x) || x < 0.0) throw DomainError("gpd_log_likelihood: bad excess");
            sum += x;
        }
        return -n * log_sigma - sum / params.sigma;
    }
    double ll = -n * log_sigma;
    const double coeff = 1.0 + 1.0 / params.xi;
    for (double x : excesses) {
        if (!std::isfinite(x) || x < 0.0) throw DomainError("gpd_log_likelihood: bad excess");
        const double z = params.xi * x / params.sigma;
        if (1.0 + z <= 0.0) return -kInf;  // outside the xi < 0 support
        ll -= coeff * std::log1p(z);
    }
    return ll;
}

ExceedanceSample select_threshold(const std::vector<double>& distances, double eta) {
    if (distances.empty()) throw DomainError("select_threshold: empty distance sample");
    if (!(eta > 0.0 && eta < 1.0)) throw DomainError("select_threshold: eta must lie in (0,1)");
    for (double d : distances) {
        if (!std::isfinite(d)) throw DomainError("select_threshold: non-finite distance");
    }
    std::vector<double> sorted(distances);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const std::size_t n = sorted.size();
    // Rank ceil(eta*n), guarded against floating-point creep on exact products.
    std::size_t rank = static_cast<std::size_t>(std::ceil(eta * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);

    ExceedanceSample sample;
    sample.threshold_u = sorted[rank - 1];
    sample.source_count = n;
    for (std::size_t i = 0; i + 1 < rank; ++i) {
        if (sorted[i] > sample.threshold_u) {
            sample.excesses.push_back(sorted[i] - sample.threshold_u);
        }
    }
    if (sample.excesses.empty()) {
        throw InsufficientTailError("select_threshold: no distance strictly exceeds u=" +
                                    io::format_double(sample.threshold_u));
    }
    return sample;
}

namespace {

// Profile log-likelihood over sigma for fixed xi, maximized by golden-section
// search on log sigma.
double best_sigma_for_xi(const std::vector<double>& x, double xi, double mean, double xmax,
                         int iterations, double* best_ll) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = (xi < 0.0) ? -xi * xmax * (1.0 + 1e-10) + 1e-300 : mean * 1e-6;
    lo = std::max(lo, 1e-300);
    double hi = std::max(4.0 * mean, lo * 8.0);
    double a = std::log(lo), b = std::log(hi);

    auto eval = [&](double log_sigma) {
        return gpd_log_likelihood(x, GpdParams{std::exp(log_sigma), xi});
    };

    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = eval(c), fd = eval(d);
    for (int i = 0; i < iterations; ++i) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
    }
    const double log_sigma = fc > fd ? c : d;
    if (best_ll) *best_ll = std::max(fc, fd);
    return std::exp(log_sigma);
}

struct SimplexPoint {
    double xi = 0.0;
    double log_sigma = 0.0;
    double neg_ll = kInf;
};

}  // namespace

GpdParams fit_gpd_mle(const ExceedanceSample& sample, const GpdFitOptions& options) {
    const std::vector<double>& x = sample.excesses;
    if (x.size() < kMinExcesses) {
        throw InsufficientTailError("fit_gpd_mle: need at least " + std::to_string(kMinExcesses) +
                                    " excesses, got " + std::to_string(x.size()));
    }
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const double xmax = *std::max_element(x.begin(), x.end());
    if (!(mean > 0.0)) throw DomainError("fit_gpd_mle: excesses must not all be zero");

    // Stage 1: coarse grid over xi with sigma profiled out.
    GpdParams best{mean, 0.0};
    double best_ll = gpd_log_likelihood(x, best);
    for (double xi = options.xi_min; xi <= options.xi_max + 1e-12; xi += options.coarse_xi_step) {
        double ll = -kInf;
        const double sigma = best_sigma_for_xi(x, xi, mean, xmax, options.golden_iterations, &ll);
        if (ll > best_ll) {
            best_ll = ll;
            best = GpdParams{sigma, xi};
        }
    }

    // Stage 2: Nelder-Mead on (xi, log sigma) around the grid winner.
    auto objective = [&](double xi, double log_sigma) {
        if (xi < options.xi_min || xi > options.xi_max) return kInf;
        if (!std::isfinite(log_sigma) || log_sigma > 60.0 || log_sigma < -300.0) return kInf;
        const double ll = gpd_log_likelihood(x, GpdParams{std::exp(log_sigma), xi});
        return -ll;
    };

    std::array<SimplexPoint, 3> simplex;
    simplex[0] = {best.xi, std::log(best.sigma), 0.0};
    simplex[1] = {std::min(best.xi + 0.02, options.xi_max), std::log(best.sigma), 0.0};
    simplex[2] = {best.xi, std::log(best.sigma) + 0.05, 0.0};
    for (auto& p : simplex) p.neg_ll = objective(p.xi, p.log_sigma);

    auto order = [&] {
        std::sort(simplex.begin(), simplex.end(),
                  [](const SimplexPoint& a, const SimplexPoint& b) { return a.neg_ll < b.neg_ll; });
    };

    bool converged = false;
    for (int iter = 0; iter < options.simplex_max_iterations; ++iter) {
        order();
        if (simplex[2].neg_ll - simplex[0].neg_ll < options.simplex_tolerance) {
            converged = true;
            break;
        }
        const double cx = (simplex[0].xi + simplex[1].xi) / 2.0;
        const double cs = (simplex[0].log_sigma + simplex[1].log_sigma) / 2.0;
        SimplexPoint refl{cx + (cx - simplex[2].xi), cs + (cs - simplex[2].log_sigma), 0.0};
        refl.neg_ll = objective(refl.xi, refl.log_sigma);
        if (refl.neg_ll < simplex[0].neg_ll) {
            SimplexPoint exp_pt{cx + 2.0 * (cx - simplex[2].xi),
                                cs + 2.0 * (cs - simplex[2].log_sigma), 0.0};
            exp_pt.neg_ll = objective(exp_pt.xi, exp_pt.log_sigma);
            simplex[2] = exp_pt.neg_ll < refl.neg_ll ? exp_pt : refl;
        } else if (refl.neg_ll < simplex[1].neg_ll) {
            simplex[2] = refl;
        } else {
            SimplexPoint contr{cx + 0.5 * (simplex[2].xi - cx),
                               cs + 0.5 * (simplex[2].log_sigma - cs), 0.0};
            contr.neg_ll = objective(contr.xi, contr.log_sigma);
            if (contr.neg_ll < simplex[2].neg_ll) {
                simplex[2] = contr;
            } else {
                for (int i = 1; i < 3; ++i) {
                    simplex[i].xi = simplex[0].xi + 0.5 * (simplex[i].xi - simplex[0].xi);
                    simplex[i].log_sigma =
                        simplex[0].log_sigma + 0.5 * (simplex[i].log_sigma - simplex[0].log_sigma);
                    simplex[i].neg_ll = objective(simplex[i].xi, simplex[i].log_sigma);
                }
            }
        }
    }
    order();
    if (std::isfinite(simplex[0].neg_ll) && -simplex[0].neg_ll > best_ll) {
        best_ll = -simplex[0].neg_ll;
        best = GpdParams{std::exp(simplex[0].log_sigma), simplex[0].xi};
    }
    if (!converged) {
        throw GpdFitError("fit_gpd_mle: simplex did not converge within iteration cap", best);
    }
    return best;
}

std::vector<std::pair<double, double>> qq_points(const ExceedanceSample& sample,
                                                 const GpdParams& params) {
    check_params(params);
    if (sample.excesses.empty()) throw DomainError("qq_points: empty sample");
    std::vector<double> sorted(sample.excesses);
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    std::vector<std::pair<double, double>> points;
    points.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double p = (static_cast<double>(i) + 0.5) / n;
        points.emplace_back(gpd_quantile(p, params), sorted[i]);
    }
    return points;
}

std::string qq_points_csv(const std::vector<std::pair<double, double>>& points) {
    std::ostringstream out;
    out << "theoretical,empirical\n";
    for (const auto& [t, e] : points) {
        out << io::format_double(t) << ',' << io::format_double(e) << '\n';
    }
    return out.str();
}

}  // namespace izsd
