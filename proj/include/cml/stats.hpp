#pragma once

// Summaries of integer-valued run statistics, geometric goodness of fit and
// comparison against the universal means and variance caps.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cml/analytic.hpp"

namespace cml {

using Histogram = std::map<long long, std::uint64_t>;

inline constexpr std::uint64_t kMinConclusiveRuns = 1000;

struct EstimateSummary {
    std::uint64_t n = 0;
    double mean = 0.0;
    double variance = 0.0;          ///< unbiased
    double z = 3.0;
    double mean_ci_halfwidth = 0.0; ///< z * sqrt(variance / n)
    double var_std_error = 0.0;     ///< from the fourth central moment
    Histogram histogram;

    double mean_std_error() const;
};

EstimateSummary summarize(const Histogram& histogram, double z = 3.0);
EstimateSummary summarize(std::span<const long long> samples, double z = 3.0);
EstimateSummary summarize(std::span<const int> samples, double z = 3.0);

Histogram histogram_of(std::span<const int> samples);
/// Associative, commutative.
Histogram merge(const Histogram& x, const Histogram& y);

struct GofResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int cells = 0;
    int dof = 0;
    bool conclusive = false; ///< false below kMinConclusiveRuns samples
};

/// Chi-square test against Geometric(p) on {shift, shift+1, ...}; tail
/// cells are pooled until every expected count is at least 5.
GofResult gof_geometric(const Histogram& histogram, double p, long long shift = 1);

enum class Verdict { pass, fail, inconclusive };
enum class Claim { lemma, theorem, conjecture };

std::string_view to_string(Verdict v);
std::string_view to_string(Claim c);

struct BoundCheck {
    std::string name;
    Claim claim = Claim::lemma;
    double empirical = 0.0;
    double reference = 0.0;
    double allowance = 0.0; ///< 3 standard errors
    double margin = 0.0;    ///< positive when the check passes
    Verdict verdict = Verdict::inconclusive;
};

struct BoundsReport {
    ThresholdPair pair{0.1, 0.25};
    BoundBundle theoretical;
    EstimateSummary n_b;
    EstimateSummary d_ab;
    std::vector<BoundCheck> checks;

    const BoundCheck& check(std::string_view name) const;
    /// Every lemma and theorem check passes; conjecture checks are not counted.
    bool proven_checks_pass() const;
};

BoundsReport bounds_report(const ThresholdPair& pair, const EstimateSummary& n_b, const EstimateSummary& d_ab);

nlohmann::ordered_json to_json(const BoundBundle& b);
nlohmann::ordered_json to_json(const EstimateSummary& s);
nlohmann::ordered_json to_json(const GofResult& g);
nlohmann::ordered_json to_json(const BoundsReport& r);

std::string to_text(const BoundsReport& r);
void write_histogram_csv(std::ostream& out, const Histogram& h);

} // namespace cml
