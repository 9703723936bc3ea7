#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library; the formulas are rederived from lattice walks, direct algebra or
// brute force.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

// P(simple random walk on {0..n} from i hits hi before lo), by solving the
// discrete Laplace equation with the Thomas algorithm.
inline double lattice_hit(int i, int lo, int hi) {
    const int n = hi - lo - 1;
    if (i <= lo) return 0.0;
    if (i >= hi) return 1.0;
    std::vector<double> c(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
    // u[k-1] - 2 u[k] + u[k+1] = 0, u[lo] = 0, u[hi] = 1
    for (int k = 0; k < n; ++k) {
        const double rhs = k == n - 1 ? -1.0 : 0.0;
        const double denom = -2.0 - (k > 0 ? c[static_cast<std::size_t>(k - 1)] : 0.0);
        c[static_cast<std::size_t>(k)] = 1.0 / denom;
        d[static_cast<std::size_t>(k)] = (rhs - (k > 0 ? d[static_cast<std::size_t>(k - 1)] : 0.0)) / denom;
    }
    std::vector<double> u(static_cast<std::size_t>(n));
    for (int k = n - 1; k >= 0; --k) {
        u[static_cast<std::size_t>(k)] =
            d[static_cast<std::size_t>(k)] - (k < n - 1 ? c[static_cast<std::size_t>(k)] * u[static_cast<std::size_t>(k + 1)] : 0.0);
    }
    return u[static_cast<std::size_t>(i - lo - 1)];
}

// Law of the downcrossing count of [ia, ib] for a walk on {0..n} from
// `start`, built from lattice hitting probabilities.
inline std::vector<double> lattice_downcrossing_pmf(int n, int ia, int ib, int start, int dmax) {
    std::vector<double> pmf(static_cast<std::size_t>(dmax + 1), 0.0);
    const double reach_b = start >= ib ? 1.0 : lattice_hit(start, 0, ib);
    const double b_to_a = 1.0 - lattice_hit(ib, ia, n);
    const double a_to_b = lattice_hit(ia, 0, ib);
    // a start above b is already active
    const double first = start >= ib ? 1.0 - lattice_hit(start, ia, n) : reach_b * b_to_a;
    pmf[0] = 1.0 - first;
    double mass = first;
    for (int d = 1; d <= dmax; ++d) {
        // exactly d: after the d-th downcrossing, never complete another
        pmf[static_cast<std::size_t>(d)] = mass * (1.0 - a_to_b * b_to_a);
        mass *= a_to_b * b_to_a;
    }
    return pmf;
}

// The proved cap on var(D_ab), expanded: m + m^2 + 2 mu + 2 sqrt(mu (m + 2 m^2 + mu)).
inline double proved_cap(double a, double b) {
    const double m = (1 - b) / (b - a);
    const double mu = std::min((2 - b) / (b * b), 1 / (a * a));
    return m + m * m + 2 * mu + 2 * std::sqrt(mu * (m + 2 * m * m + mu));
}

// Geometric(p) on {1, 2, ...} by inversion.
inline long long geometric_draw(std::mt19937_64& g, double p) {
    const double u = std::generate_canonical<double, 53>(g);
    return 1 + static_cast<long long>(std::floor(std::log1p(-u) / std::log1p(-p)));
}

inline double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

inline double variance(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

// Crossing monitor on a polyline, evaluated by sampling each segment on a
// fine uniform mesh. Good enough for paths whose vertices sit away from the
// thresholds.
struct PolylineCount {
    bool reached_b = false;
    int downcrossings = 0;
};

inline PolylineCount polyline_count(const std::vector<double>& path, double a, double b, int mesh = 1000) {
    PolylineCount out;
    bool active = false;
    auto visit = [&](double v) {
        if (v >= b) {
            out.reached_b = true;
            active = true;
        } else if (v <= a && active) {
            ++out.downcrossings;
            active = false;
        }
    };
    visit(path.front());
    for (std::size_t k = 1; k < path.size(); ++k) {
        for (int s = 1; s <= mesh; ++s) visit(path[k - 1] + (path[k] - path[k - 1]) * s / mesh);
    }
    return out;
}

// Dense Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> rhs) {
    const std::size_t n = rhs.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        }
        std::swap(a[c], a[piv]);
        std::swap(rhs[c], rhs[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            if (f == 0.0) continue;
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            rhs[r] -= f * rhs[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double s = rhs[r];
        for (std::size_t k = r + 1; k < n; ++k) s -= a[r][k] * x[k];
        x[r] = s / a[r][r];
    }
    return x;
}

} // namespace oracle
