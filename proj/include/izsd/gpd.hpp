#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace izsd {

/// Scale and shape of a generalized Pareto distribution over threshold
/// excesses. Location is fixed at zero: excess data is already shifted by its
/// threshold, so the support starts at the origin.
struct GpdParams {
    double sigma = 1.0;  // scale, must stay > 0
    double xi = 0.0;     // shape

    /// Upper support bound -sigma/xi for xi < 0, +infinity otherwise.
    double support_max() const;
    bool valid() const;
};

/// Threshold u and the excesses d - u of the distances d that exceed it.
struct ExceedanceSample {
    double threshold_u = 0.0;
    std::vector<double> excesses;  // every entry >= 0, descending order of source distance
    std::size_t source_count = 0;  // size of the distance sample u was chosen from
};

/// Raised when the MLE iteration cap is hit; carries the best parameters
/// found so far.
struct GpdFitError : std::runtime_error {
    GpdParams best;
    GpdFitError(const std::string& msg, GpdParams best_so_far)
        : std::runtime_error(msg), best(best_so_far) {}
};

/// |xi| below this routes to the exponential (xi = 0) branch.
inline constexpr double kXiZeroEps = 1e-9;

/// Fewest excesses accepted by fit_gpd_mle; below this the tail is too thin
/// for a stable fit.
inline constexpr std::size_t kMinExcesses = 5;

struct GpdFitOptions {
    // Distances between unit vectors are bounded, so heavy xi > 1 tails are
    // implausible; the search box is configurable for other data.
    double xi_min = -0.5;
    double xi_max = 1.0;
    double coarse_xi_step = 0.05;
    int golden_iterations = 80;
    int simplex_max_iterations = 400;
    double simplex_tolerance = 1e-12;
};

/// GPD cumulative distribution function (location 0).
/// 1 - (1 + xi x / sigma)^(-1/xi) for xi != 0, 1 - exp(-x/sigma) for xi = 0;
/// exactly 1 at and above the support bound when xi < 0.
double gpd_cdf(double x, const GpdParams& params);

/// Inverse CDF, the closed form of the distribution above.
double gpd_quantile(double prob, const GpdParams& params);

/// Sum of log densities of the excesses. Returns -infinity when any excess
/// lies outside the xi < 0 support bound.
double gpd_log_likelihood(const std::vector<double>& excesses, const GpdParams& params);

/// Picks the threshold at descending rank ceil(eta * n), i.e. the empirical
/// (1 - eta)-quantile, and collects the strictly greater distances minus u.
/// Strict exceedance avoids zero excesses from ties at the threshold.
ExceedanceSample select_threshold(const std::vector<double>& distances, double eta);

/// Maximum-likelihood fit. Two stages: a coarse profile-likelihood grid over
/// xi with sigma solved per xi by golden section, then Nelder-Mead refinement
/// of (xi, log sigma). Derivative-free, which keeps it robust near xi = 0 and
/// near the xi < 0 support boundary.
GpdParams fit_gpd_mle(const ExceedanceSample& sample, const GpdFitOptions& options = {});

/// (theoretical quantile, empirical quantile) pairs for a fitted sample:
/// for sorted excesses x_(i), the pair (G^-1((i - 0.5)/n), x_(i)).
std::vector<std::pair<double, double>> qq_points(const ExceedanceSample& sample,
                                                 const GpdParams& params);

/// CSV rendering of qq_points with header "theoretical,empirical".
std::string qq_points_csv(const std::vector<std::pair<double, double>>& points);

}  // namespace izsd
