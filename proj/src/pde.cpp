#include "cml/pde.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "cml/error.hpp"

namespace cml {

PdeGrid::PdeGrid(double b_, int m_) : b(b_), m(m_), values(static_cast<std::size_t>((m_ + 2) * (m_ + 2)), 0.0) {}

double PdeGrid::interpolate(double x, double y) const {
    if (!(x >= 0.0 && x <= b && y >= 0.0 && y <= b)) throw DomainError("interpolation point outside [0,b]^2");
    const double h = step();
    const int last = m + 1;
    const int i = std::min(static_cast<int>(x / h), last - 1);
    const int j = std::min(static_cast<int>(y / h), last - 1);
    const double u = x / h - i;
    const double v = y / h - j;
    return (1 - u) * (1 - v) * at(i, j) + u * (1 - v) * at(i + 1, j) + (1 - u) * v * at(i, j + 1) +
           u * v * at(i + 1, j + 1);
}

void PdeGrid::write_csv(std::ostream& out) const {
    const double h = step();
    out << "x,y,f\n";
    out.precision(17);
    for (int j = 0; j < n(); ++j) {
        for (int i = 0; i < n(); ++i) out << i * h << ',' << j * h << ',' << at(i, j) << '\n';
    }
}

double pde_boundary(double x, double y, double b) {
    if (x <= 0.0 || y <= 0.0) return 0.0;
    if (y >= b) return x / b;
    if (x >= b) return y / b;
    return 0.0;
}

PdeGrid product_reference(double b, int m) {
    PdeGrid g(b, m);
    const double h = g.step();
    for (int j = 0; j < g.n(); ++j) {
        for (int i = 0; i < g.n(); ++i) g.at(i, j) = (i * h) * (j * h) / (b * b);
    }
    return g;
}

PdeSystem pde_assemble(double b, int m, Stencil stencil) {
    if (!(b > 0.0 && b < 1.0)) throw DomainError("pde: b must lie in (0,1)");
    if (m < 3) throw PreconditionError("pde: need m >= 3");
    PdeSystem sys;
    sys.b = b;
    sys.m = m;
    sys.stencil = stencil;
    const double h = b / (m + 1);
    const int last = m + 1;
    sys.rhs.assign(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0.0);
    auto& a = sys.matrix;
    a.cols = m * m;
    a.col.reserve(static_cast<std::size_t>(9 * m * m));
    a.val.reserve(static_cast<std::size_t>(9 * m * m));
    for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= m; ++i) {
            const double x = i * h;
            const double y = j * h;
            const double ax = 0.5 * x * (1.0 - x);
            const double ay = 0.5 * y * (1.0 - y);
            const double xy = x * y;
            struct Tap {
                int di, dj;
                double c;
            };
            Tap taps[9];
            int nt = 0;
            if (stencil == Stencil::nine_point) {
                taps[nt++] = {0, 0, -2.0 * ax - 2.0 * ay};
                taps[nt++] = {1, 0, ax};
                taps[nt++] = {-1, 0, ax};
                taps[nt++] = {0, 1, ay};
                taps[nt++] = {0, -1, ay};
                taps[nt++] = {1, 1, -0.25 * xy};
                taps[nt++] = {-1, -1, -0.25 * xy};
                taps[nt++] = {-1, 1, 0.25 * xy};
                taps[nt++] = {1, -1, 0.25 * xy};
            } else {
                taps[nt++] = {0, 0, -2.0 * ax - 2.0 * ay + xy};
                taps[nt++] = {1, 0, ax - 0.5 * xy};
                taps[nt++] = {-1, 0, ax - 0.5 * xy};
                taps[nt++] = {0, 1, ay - 0.5 * xy};
                taps[nt++] = {0, -1, ay - 0.5 * xy};
                taps[nt++] = {-1, 1, 0.5 * xy};
                taps[nt++] = {1, -1, 0.5 * xy};
            }
            const int row = (i - 1) + m * (j - 1);
            for (int t = 0; t < nt; ++t) {
                const int ii = i + taps[t].di;
                const int jj = j + taps[t].dj;
                if (ii == 0 || jj == 0 || ii == last || jj == last) {
                    sys.rhs[static_cast<std::size_t>(row)] -= taps[t].c * pde_boundary(ii * h, jj * h, b);
                } else {
                    a.push((ii - 1) + m * (jj - 1), taps[t].c);
                }
            }
            a.end_row();
        }
    }
    return sys;
}

namespace {

void fill_boundary(PdeGrid& g) {
    const double h = g.step();
    const int last = g.m + 1;
    for (int k = 0; k <= last; ++k) {
        g.at(k, 0) = pde_boundary(k * h, 0.0, g.b);
        g.at(0, k) = pde_boundary(0.0, k * h, g.b);
        g.at(k, last) = pde_boundary(k * h, g.b, g.b);
        g.at(last, k) = pde_boundary(g.b, k * h, g.b);
    }
}

} // namespace

PdeSolution pde_solve(const PdeSystem& system, double tol, Execution exec, int max_iter) {
    const int m = system.m;
    PdeSolution sol;
    sol.stencil = system.stencil;
    sol.grid = PdeGrid(system.b, m);
    const double h = sol.grid.step();
    const double b2 = system.b * system.b;

    std::vector<double> u(static_cast<std::size_t>(m) * static_cast<std::size_t>(m));
    for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= m; ++i) u[static_cast<std::size_t>((i - 1) + m * (j - 1))] = (i * h) * (j * h) / b2;
    }
    // BiCGSTAB can report convergence on its recursive residual while the
    // true one is still above tol; restart from the current iterate.
    int used = 0;
    for (int attempt = 0; attempt < 5 && used < max_iter; ++attempt) {
        sol.stats = bicgstab(system.matrix, system.rhs, u, tol, max_iter - used, exec);
        used += sol.stats.iterations;
        if (sol.stats.converged) break;
    }
    sol.stats.iterations = used;
    if (!sol.stats.converged) {
        throw SolverError("pde: BiCGSTAB stopped at relative residual " + std::to_string(sol.stats.rel_residual),
                          sol.stats.rel_residual);
    }

    fill_boundary(sol.grid);
    for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= m; ++i) sol.grid.at(i, j) = u[static_cast<std::size_t>((i - 1) + m * (j - 1))];
    }

    const PdeGrid& g = sol.grid;
    const int n = g.n();
    sol.in_unit_interval = true;
    sol.monotone = true;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double f = g.at(i, j);
            sol.symmetry_defect = std::max(sol.symmetry_defect, std::abs(f - g.at(j, i)));
            if (f < 0.0 || f > 1.0) sol.in_unit_interval = false;
            if (i > 0 && f < g.at(i - 1, j) - 1e-12) sol.monotone = false;
            if (j > 0 && f < g.at(i, j - 1) - 1e-12) sol.monotone = false;
            if (i == 0 || j == 0 || i == n - 1 || j == n - 1) {
                sol.boundary_defect = std::max(sol.boundary_defect, std::abs(f - pde_boundary(i * h, j * h, g.b)));
            }
        }
    }
    return sol;
}

PdeSolution pde_solve_checked(double b, int m, double tol, Execution exec) {
    PdeSolution sol = pde_solve(pde_assemble(b, m, Stencil::nine_point), tol, exec);
    if (sol.in_unit_interval && sol.monotone) return sol;
    return pde_solve(pde_assemble(b, m, Stencil::seven_point), tol, exec);
}

std::vector<double> corner_ratio(const PdeGrid& grid, std::span<const double> xs) {
    std::vector<double> r;
    r.reserve(xs.size());
    const double h = grid.step();
    for (double x : xs) {
        if (x < h * (1.0 - 1e-12)) throw DomainError("corner_ratio: abscissa below grid resolution");
        if (x >= grid.b) throw DomainError("corner_ratio: abscissa must be interior");
        r.push_back(grid.interpolate(x, x) * grid.b * grid.b / (x * x));
    }
    return r;
}

double grid_difference(const PdeGrid& coarse, const PdeGrid& fine) {
    if (fine.m + 1 != 2 * (coarse.m + 1) || coarse.b != fine.b) {
        throw PreconditionError("grid_difference: fine grid must halve the coarse step");
    }
    double d = 0.0;
    for (int j = 0; j < coarse.n(); ++j) {
        for (int i = 0; i < coarse.n(); ++i) d = std::max(d, std::abs(coarse.at(i, j) - fine.at(2 * i, 2 * j)));
    }
    return d;
}

CornerReport corner_report(const PdeGrid& coarse, const PdeGrid& fine) {
    CornerReport rep;
    const double b = fine.b;
    rep.xs = {b / 64, b / 32, b / 16, b / 8};
    rep.ratio = corner_ratio(fine, rep.xs);
    rep.ratio_coarse = corner_ratio(coarse, rep.xs);
    rep.extrapolated = 2.0 * rep.ratio[0] - rep.ratio[1];
    for (std::size_t k = 0; k < rep.xs.size(); ++k) {
        rep.refinement_error = std::max(rep.refinement_error, std::abs(rep.ratio[k] - rep.ratio_coarse[k]));
    }
    return rep;
}

} // namespace cml
