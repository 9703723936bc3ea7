#include "cml/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cml/error.hpp"

namespace cml {

ThresholdPair::ThresholdPair(double a, double b) : a_(a), b_(b) {
    if (!(a > 0.0 && a < b && b < 1.0)) {
        throw DomainError("threshold pair requires 0 < a < b < 1, got a=" + std::to_string(a) +
                          " b=" + std::to_string(b));
    }
}

double hit_prob(double x, double lower, double upper) {
    if (!(lower < upper)) throw DomainError("hit_prob: degenerate interval");
    if (!(x >= lower && x <= upper)) throw DomainError("hit_prob: start outside [lower, upper]");
    return (x - lower) / (upper - lower);
}

double exp_downcrossings(double x, const ThresholdPair& pair) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("exp_downcrossings: start outside [0,1]");
    const double a = pair.a();
    const double b = pair.b();
    if (x <= b) return x * (1.0 - b) / (b - a);
    return b * (1.0 - x) / (b - a);
}

double downcrossing_ratio(const ThresholdPair& pair) {
    const double a = pair.a();
    const double b = pair.b();
    return a * (1.0 - b) / (b * (1.0 - a));
}

double mod_geometric_pmf(long long d, const ThresholdPair& pair) {
    if (d < 0) return 0.0;
    const double a = pair.a();
    const double b = pair.b();
    if (d == 0) return (b - a) / (1.0 - a);
    const double rho = downcrossing_ratio(pair);
    return (1.0 - b) / (1.0 - a) * std::pow(rho, static_cast<double>(d - 1)) * (1.0 - rho);
}

double geometric_pmf(long long k, double p, long long shift) {
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("geometric_pmf: p outside (0,1]");
    if (k < shift) return 0.0;
    return p * std::pow(1.0 - p, static_cast<double>(k - shift));
}

int stage_unit(double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("stage_unit: alpha outside [0,1)");
    // Decimal thresholds such as a/b = 0.05/0.1 land within rounding of an
    // integer reciprocal; resolve those toward the exact value.
    return static_cast<int>(std::floor(1.0 / (1.0 - alpha) + 1e-9));
}

int k_alpha(double alpha) { return 6 * stage_unit(alpha) - 1; }

BoundBundle bounds(const ThresholdPair& pair) {
    const double a = pair.a();
    const double b = pair.b();
    const double m = (1.0 - b) / (b - a);

    BoundBundle out;
    out.mean_Nb = 1.0 / b;
    out.mean_Dab = m;
    out.var_cap_Nb = (1.0 - b) / (b * b);
    out.var_cap_Dab_conjectured = m * m + m;
    out.mu = std::min((2.0 - b) / (b * b), 1.0 / (a * a));
    const double root = std::sqrt(m + 2.0 * m * m + out.mu) + std::sqrt(out.mu);
    out.var_cap_Dab_proved = root * root - m * m;
    out.k_alpha = k_alpha(pair.alpha());
    return out;
}

} // namespace cml
