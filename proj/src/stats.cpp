#include "cml/stats.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "cml/error.hpp"

namespace cml {

double EstimateSummary::mean_std_error() const {
    return n > 0 ? std::sqrt(variance / static_cast<double>(n)) : 0.0;
}

EstimateSummary summarize(const Histogram& histogram, double z) {
    EstimateSummary s;
    s.z = z;
    s.histogram = histogram;
    long double n = 0.0L;
    long double sum = 0.0L;
    for (const auto& [v, c] : histogram) {
        n += static_cast<long double>(c);
        sum += static_cast<long double>(v) * static_cast<long double>(c);
    }
    if (n == 0.0L) throw PreconditionError("summarize: no samples");
    s.n = static_cast<std::uint64_t>(n);
    const long double mean = sum / n;
    long double m2 = 0.0L;
    long double m4 = 0.0L;
    for (const auto& [v, c] : histogram) {
        const long double d = static_cast<long double>(v) - mean;
        const long double d2 = d * d;
        m2 += d2 * static_cast<long double>(c);
        m4 += d2 * d2 * static_cast<long double>(c);
    }
    s.mean = static_cast<double>(mean);
    if (s.n >= 2) {
        const long double var = m2 / (n - 1.0L);
        const long double c4 = m4 / n;
        s.variance = static_cast<double>(var);
        const long double v = (c4 - var * var * (n - 3.0L) / (n - 1.0L)) / n;
        s.var_std_error = static_cast<double>(std::sqrt(std::max(v, 0.0L)));
    }
    s.mean_ci_halfwidth = z * s.mean_std_error();
    return s;
}

EstimateSummary summarize(std::span<const long long> samples, double z) {
    Histogram h;
    for (long long v : samples) ++h[v];
    return summarize(h, z);
}

EstimateSummary summarize(std::span<const int> samples, double z) {
    return summarize(histogram_of(samples), z);
}

Histogram histogram_of(std::span<const int> samples) {
    Histogram h;
    for (int v : samples) ++h[v];
    return h;
}

Histogram merge(const Histogram& x, const Histogram& y) {
    Histogram out = x;
    for (const auto& [v, c] : y) out[v] += c;
    return out;
}

GofResult gof_geometric(const Histogram& histogram, double p, long long shift) {
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("gof_geometric: p must lie in (0,1]");
    GofResult g;
    double n = 0.0;
    for (const auto& [v, c] : histogram) n += static_cast<double>(c);
    g.conclusive = n >= static_cast<double>(kMinConclusiveRuns);
    if (n == 0.0) {
        g.conclusive = false;
        return g;
    }
    if (histogram.begin()->first < shift) {
        g.statistic = std::numeric_limits<double>::infinity();
        g.p_value = 0.0;
        return g;
    }

    struct Cell {
        double observed = 0.0;
        double expected = 0.0;
    };
    std::vector<Cell> cells;
    Cell cur;
    long long k = shift;
    auto count_at = [&](long long v) {
        const auto it = histogram.find(v);
        return it == histogram.end() ? 0.0 : static_cast<double>(it->second);
    };
    for (;;) {
        const double tail = n * std::pow(1.0 - p, static_cast<double>(k - shift));
        if (tail < 5.0 || k - shift > 100000) break;
        cur.expected += n * geometric_pmf(k, p, shift);
        cur.observed += count_at(k);
        if (cur.expected >= 5.0) {
            cells.push_back(cur);
            cur = Cell{};
        }
        ++k;
    }
    cur.expected += n * std::pow(1.0 - p, static_cast<double>(k - shift));
    for (auto it = histogram.lower_bound(k); it != histogram.end(); ++it) cur.observed += static_cast<double>(it->second);
    if (cur.expected < 5.0 && !cells.empty()) {
        cells.back().observed += cur.observed;
        cells.back().expected += cur.expected;
    } else {
        cells.push_back(cur);
    }

    g.cells = static_cast<int>(cells.size());
    for (const auto& c : cells) {
        if (c.expected > 0.0) {
            const double d = c.observed - c.expected;
            g.statistic += d * d / c.expected;
        } else if (c.observed > 0.0) {
            g.statistic = std::numeric_limits<double>::infinity();
        }
    }
    g.dof = g.cells - 1;
    if (g.dof < 1) {
        g.p_value = 1.0;
        g.conclusive = false;
    } else if (std::isinf(g.statistic)) {
        g.p_value = 0.0;
    } else {
        g.p_value = boost::math::gamma_q(0.5 * g.dof, 0.5 * g.statistic);
    }
    return g;
}

std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
    }
    return "?";
}

std::string_view to_string(Claim c) {
    switch (c) {
    case Claim::lemma: return "lemma";
    case Claim::theorem: return "theorem";
    case Claim::conjecture: return "conjecture";
    }
    return "?";
}

const BoundCheck& BoundsReport::check(std::string_view name) const {
    for (const auto& c : checks) {
        if (c.name == name) return c;
    }
    throw PreconditionError("no bound check named " + std::string(name));
}

bool BoundsReport::proven_checks_pass() const {
    for (const auto& c : checks) {
        if (c.claim != Claim::conjecture && c.verdict != Verdict::pass) return false;
    }
    return true;
}

namespace {

BoundCheck mean_check(std::string name, const EstimateSummary& s, double reference) {
    BoundCheck c;
    c.name = std::move(name);
    c.claim = Claim::lemma;
    c.empirical = s.mean;
    c.reference = reference;
    c.allowance = 3.0 * s.mean_std_error();
    c.margin = c.allowance - std::abs(s.mean - reference);
    if (s.n < kMinConclusiveRuns) c.verdict = Verdict::inconclusive;
    else c.verdict = c.margin >= 0.0 ? Verdict::pass : Verdict::fail;
    return c;
}

BoundCheck cap_check(std::string name, Claim claim, const EstimateSummary& s, double cap) {
    BoundCheck c;
    c.name = std::move(name);
    c.claim = claim;
    c.empirical = s.variance;
    c.reference = cap;
    c.allowance = 3.0 * s.var_std_error;
    c.margin = cap + c.allowance - s.variance;
    if (s.n < kMinConclusiveRuns) c.verdict = Verdict::inconclusive;
    else c.verdict = c.margin >= 0.0 ? Verdict::pass : Verdict::fail;
    return c;
}

} // namespace

BoundsReport bounds_report(const ThresholdPair& pair, const EstimateSummary& n_b, const EstimateSummary& d_ab) {
    BoundsReport r;
    r.pair = pair;
    r.theoretical = bounds(pair);
    r.n_b = n_b;
    r.d_ab = d_ab;
    r.checks.push_back(mean_check("mean_Nb", n_b, r.theoretical.mean_Nb));
    r.checks.push_back(mean_check("mean_Dab", d_ab, r.theoretical.mean_Dab));
    r.checks.push_back(cap_check("var_Nb", Claim::theorem, n_b, r.theoretical.var_cap_Nb));
    r.checks.push_back(cap_check("var_Dab", Claim::theorem, d_ab, r.theoretical.var_cap_Dab_proved));
    r.checks.push_back(cap_check("var_Dab_conjectured", Claim::conjecture, d_ab, r.theoretical.var_cap_Dab_conjectured));
    return r;
}

nlohmann::ordered_json to_json(const BoundBundle& b) {
    nlohmann::ordered_json j;
    j["mean_Nb"] = b.mean_Nb;
    j["mean_Dab"] = b.mean_Dab;
    j["var_cap_Nb"] = b.var_cap_Nb;
    j["var_cap_Dab_conjectured"] = b.var_cap_Dab_conjectured;
    j["var_cap_Dab_proved"] = b.var_cap_Dab_proved;
    j["mu"] = b.mu;
    j["k_alpha"] = b.k_alpha;
    return j;
}

nlohmann::ordered_json to_json(const EstimateSummary& s) {
    nlohmann::ordered_json j;
    j["n"] = s.n;
    j["mean"] = s.mean;
    j["variance"] = s.variance;
    j["z"] = s.z;
    j["mean_ci_halfwidth"] = s.mean_ci_halfwidth;
    j["var_std_error"] = s.var_std_error;
    auto& h = j["histogram"];
    h = nlohmann::ordered_json::object();
    for (const auto& [v, c] : s.histogram) h[std::to_string(v)] = c;
    return j;
}

nlohmann::ordered_json to_json(const GofResult& g) {
    nlohmann::ordered_json j;
    j["statistic"] = g.statistic;
    j["p_value"] = g.p_value;
    j["cells"] = g.cells;
    j["dof"] = g.dof;
    j["conclusive"] = g.conclusive;
    return j;
}

nlohmann::ordered_json to_json(const BoundsReport& r) {
    nlohmann::ordered_json j;
    j["a"] = r.pair.a();
    j["b"] = r.pair.b();
    j["theoretical"] = to_json(r.theoretical);
    j["N_b"] = to_json(r.n_b);
    j["D_ab"] = to_json(r.d_ab);
    auto& checks = j["checks"];
    checks = nlohmann::ordered_json::array();
    for (const auto& c : r.checks) {
        nlohmann::ordered_json e;
        e["name"] = c.name;
        e["claim"] = std::string(to_string(c.claim));
        e["empirical"] = c.empirical;
        e["reference"] = c.reference;
        e["allowance"] = c.allowance;
        e["margin"] = c.margin;
        e["verdict"] = std::string(to_string(c.verdict));
        checks.push_back(std::move(e));
    }
    return j;
}

std::string to_text(const BoundsReport& r) {
    std::ostringstream out;
    out << "a=" << r.pair.a() << " b=" << r.pair.b() << "  runs=" << r.n_b.n << '\n';
    out << std::left << std::setw(22) << "check" << std::setw(12) << "claim" << std::right << std::setw(14)
        << "empirical" << std::setw(14) << "reference" << std::setw(12) << "allowance" << "  verdict\n";
    out << std::fixed << std::setprecision(5);
    for (const auto& c : r.checks) {
        out << std::left << std::setw(22) << c.name << std::setw(12) << to_string(c.claim) << std::right
            << std::setw(14) << c.empirical << std::setw(14) << c.reference << std::setw(12) << c.allowance << "  "
            << to_string(c.verdict) << '\n';
    }
    return out.str();
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
    out << "value,count\n";
    for (const auto& [v, c] : h) out << v << ',' << c << '\n';
}

} // namespace cml
