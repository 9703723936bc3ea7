#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "cml/error.hpp"
#include "cml/pde.hpp"
#include "oracles.hpp"

using namespace cml;

namespace {

// Discrete operator applied directly to a full grid function.
double apply_stencil(const PdeGrid& g, int i, int j) {
    const double h = g.step();
    const double x = i * h;
    const double y = j * h;
    const double fxx = g.at(i + 1, j) - 2 * g.at(i, j) + g.at(i - 1, j);
    const double fyy = g.at(i, j + 1) - 2 * g.at(i, j) + g.at(i, j - 1);
    const double fxy = (g.at(i + 1, j + 1) - g.at(i + 1, j - 1) - g.at(i - 1, j + 1) + g.at(i - 1, j - 1)) / 4;
    return 0.5 * x * (1 - x) * fxx + 0.5 * y * (1 - y) * fyy - x * y * fxy;
}

std::vector<std::vector<double>> dense(const CsrMatrix& a) {
    std::vector<std::vector<double>> d(static_cast<std::size_t>(a.rows), std::vector<double>(static_cast<std::size_t>(a.cols), 0.0));
    for (int r = 0; r < a.rows; ++r) {
        for (int k = a.row_ptr[static_cast<std::size_t>(r)]; k < a.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            d[static_cast<std::size_t>(r)][static_cast<std::size_t>(a.col[static_cast<std::size_t>(k)])] += a.val[static_cast<std::size_t>(k)];
        }
    }
    return d;
}

} // namespace

TEST_CASE("boundary data") {
    CHECK(pde_boundary(0.2, 0.5, 0.5) == doctest::Approx(0.4));
    CHECK(pde_boundary(0.5, 0.1, 0.5) == doctest::Approx(0.2));
    CHECK(pde_boundary(0.0, 0.5, 0.5) == 0.0);
    CHECK(pde_boundary(0.3, 0.0, 0.5) == 0.0);
    CHECK(pde_boundary(0.5, 0.5, 0.5) == 1.0);
}

TEST_CASE("assembly matches the stencil on the full grid") {
    const double b = 0.5;
    const int m = 6;
    const auto sys = pde_assemble(b, m);
    CHECK(sys.matrix.rows == m * m);
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PdeGrid full(b, m);
    const double h = full.step();
    std::vector<double> interior(static_cast<std::size_t>(m * m));
    for (int j = 0; j <= m + 1; ++j) {
        for (int i = 0; i <= m + 1; ++i) {
            const bool edge = i == 0 || j == 0 || i == m + 1 || j == m + 1;
            full.at(i, j) = edge ? pde_boundary(i * h, j * h, b) : u(g);
            if (!edge) interior[static_cast<std::size_t>((i - 1) + m * (j - 1))] = full.at(i, j);
        }
    }
    std::vector<double> y(interior.size());
    spmv(sys.matrix, interior, y, Execution::serial);
    for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= m; ++i) {
            const auto r = static_cast<std::size_t>((i - 1) + m * (j - 1));
            CHECK(y[r] - sys.rhs[r] == doctest::Approx(apply_stencil(full, i, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("edge rows") {
    const double b = 0.5;
    const int m = 4;
    const auto sys = pde_assemble(b, m);
    const double h = b / (m + 1);
    const auto d = dense(sys.matrix);

    // node (1, m): neighbours (1, m+1) with value h/b and (2, m+1) with 2h/b
    const double x = h, y = m * h;
    const double ay = 0.5 * y * (1 - y);
    const double want = -(ay * (x / b) - 0.25 * x * y * (2 * h / b));
    CHECK(sys.rhs[static_cast<std::size_t>(m * (m - 1))] == doctest::Approx(want).epsilon(1e-14));

    // node (1,1): diagonal -x(1-x) - y(1-y), no boundary contribution
    CHECK(d[0][0] == doctest::Approx(-2 * h * (1 - h)));
    CHECK(sys.rhs[0] == 0.0);
    // the x-coupling at the first column shrinks with x
    CHECK(d[0][1] == doctest::Approx(0.5 * h * (1 - h)));
    CHECK(d[0][static_cast<std::size_t>(m + 1)] == doctest::Approx(-0.25 * h * h));
}

TEST_CASE("assembly is symmetric under swapping x and y") {
    const int m = 5;
    for (auto st : {Stencil::nine_point, Stencil::seven_point}) {
        const auto sys = pde_assemble(0.5, m, st);
        const auto d = dense(sys.matrix);
        auto swap = [m](int r) { return (r / m) + m * (r % m); };
        for (int r = 0; r < m * m; ++r) {
            CHECK(sys.rhs[static_cast<std::size_t>(r)] == sys.rhs[static_cast<std::size_t>(swap(r))]);
            for (int c = 0; c < m * m; ++c) {
                CHECK(d[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] ==
                      d[static_cast<std::size_t>(swap(r))][static_cast<std::size_t>(swap(c))]);
            }
        }
    }
}

TEST_CASE("preconditions") {
    CHECK_THROWS_AS(pde_assemble(0.5, 2), PreconditionError);
    CHECK_THROWS_AS(pde_assemble(1.0, 8), DomainError);
    CHECK_THROWS_AS(pde_solve(pde_assemble(0.5, 31), 1e-14, Execution::serial, 1), SolverError);
}

TEST_CASE("small solve agrees with dense elimination") {
    for (auto st : {Stencil::nine_point, Stencil::seven_point}) {
        const int m = 9;
        const auto sys = pde_assemble(0.4, m, st);
        const auto sol = pde_solve(sys, 1e-13, Execution::serial);
        const auto ref = oracle::dense_solve(dense(sys.matrix), sys.rhs);
        for (int j = 1; j <= m; ++j) {
            for (int i = 1; i <= m; ++i) {
                CHECK(sol.grid.at(i, j) ==
                      doctest::Approx(ref[static_cast<std::size_t>((i - 1) + m * (j - 1))]).epsilon(1e-9));
            }
        }
        CHECK(sol.stats.converged);
        CHECK(sol.stats.rel_residual <= 1e-13);
    }
}

TEST_CASE("solution properties") {
    const auto sol = pde_solve_checked(0.5, 63, 1e-10, Execution::serial);
    CHECK(sol.stencil == Stencil::nine_point);
    CHECK(sol.symmetry_defect <= 1e-8);
    CHECK(sol.boundary_defect == 0.0);
    CHECK(sol.in_unit_interval);
    CHECK(sol.monotone);
    const auto& g = sol.grid;
    for (int k = 0; k < g.n(); ++k) {
        CHECK(g.at(k, g.n() - 1) == pde_boundary(k * g.step(), g.b, g.b));
        CHECK(g.at(0, k) == 0.0);
    }
    CHECK(g.interpolate(8 * g.step(), 20 * g.step()) == doctest::Approx(g.at(8, 20)));
    // below the product xy/b^2 near the corner: the two components compete
    const double f = g.interpolate(0.2, 0.2);
    CHECK(f > 0.0);
    CHECK(f < 0.16);

    std::ostringstream csv;
    PdeGrid(0.5, 3).write_csv(csv);
    CHECK(csv.str().rfind("x,y,f\n", 0) == 0);
}

TEST_CASE("grid self-convergence") {
    const auto a = pde_solve_checked(0.5, 31, 1e-12, Execution::serial);
    const auto b = pde_solve_checked(0.5, 63, 1e-12, Execution::serial);
    const auto c = pde_solve_checked(0.5, 127, 1e-12, Execution::serial);
    const double d1 = grid_difference(a.grid, b.grid);
    const double d2 = grid_difference(b.grid, c.grid);
    CHECK(d2 > 0.0);
    CHECK(d1 / d2 >= 2.0);
    CHECK_THROWS_AS(grid_difference(a.grid, c.grid), PreconditionError);

    const auto rep = corner_report(b.grid, c.grid);
    REQUIRE(rep.xs.size() == 4);
    CHECK(rep.xs[0] == doctest::Approx(0.5 / 64));
    CHECK(rep.extrapolated == doctest::Approx(2 * rep.ratio[0] - rep.ratio[1]));
    CHECK(rep.refinement_error < 1e-3);
    for (double r : rep.ratio) CHECK((r > 0.0 && r < 1.0));
}

TEST_CASE("corner ratio normalisation") {
    const auto ref = product_reference(0.5, 63);
    const std::vector<double> xs = {0.5 / 64, 0.5 / 32, 0.5 / 16, 0.5 / 8, 0.3};
    for (double r : corner_ratio(ref, xs)) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<double> tiny = {0.5 / 200};
    CHECK_THROWS_AS(corner_ratio(ref, tiny), DomainError);
}
