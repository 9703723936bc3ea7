#pragma once

// Closed-form quantities for continuous martingales on [0,1] that are
// ultimately absorbed at 0 or 1. Every other module uses these as oracles.

namespace cml {

/// Threshold levels 0 < a < b < 1 over which crossings are counted.
class ThresholdPair {
public:
    ThresholdPair(double a, double b);

    double a() const noexcept { return a_; }
    double b() const noexcept { return b_; }
    double alpha() const noexcept { return a_ / b_; }

    friend bool operator==(const ThresholdPair&, const ThresholdPair&) = default;

private:
    double a_;
    double b_;
};

struct BoundBundle {
    double mean_Nb = 0.0;
    double mean_Dab = 0.0;
    double var_cap_Nb = 0.0;
    double var_cap_Dab_conjectured = 0.0;
    double var_cap_Dab_proved = 0.0;
    double mu = 0.0;
    int k_alpha = 0;
};

/// Probability that a continuous martingale started at x reaches `upper`
/// before `lower`. Requires lower <= x <= upper and lower < upper.
double hit_prob(double x, double lower, double upper);

/// Expected number of downcrossings of [a,b] for a martingale started at x.
double exp_downcrossings(double x, const ThresholdPair& pair);

/// Ratio a(1-b) / (b(1-a)) of the downcrossing law started at b.
double downcrossing_ratio(const ThresholdPair& pair);

/// Law of the downcrossing count of a martingale started at b.
double mod_geometric_pmf(long long d, const ThresholdPair& pair);

/// Geometric(p) pmf on {shift, shift+1, ...}.
double geometric_pmf(long long k, double p, long long shift = 1);

/// floor(1 / (1 - alpha)), the unit count in the small-spread stage machine.
int stage_unit(double alpha);

/// K(alpha) = 6 floor(1/(1-alpha)) - 1.
int k_alpha(double alpha);

BoundBundle bounds(const ThresholdPair& pair);

} // namespace cml
