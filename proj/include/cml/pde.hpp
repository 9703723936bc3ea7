#pragma once

// Finite differences for the joint hitting probability f(x,y) of two
// Wright-Fisher components:
//   1/2 x(1-x) f_xx + 1/2 y(1-y) f_yy - xy f_xy = 0 on (0,b)^2,
//   f(x,0) = f(0,y) = 0, f(x,b) = x/b, f(b,y) = y/b.

#include <iosfwd>
#include <span>
#include <vector>

#include "cml/batch.hpp"
#include "cml/sparse.hpp"

namespace cml {

enum class Stencil {
    nine_point,  ///< central differences, four-point cross term
    seven_point, ///< cross term on the NW/SE diagonal only; monotone when x + y <= 1
};

struct PdeGrid {
    double b = 0.5;
    int m = 0; ///< interior nodes per axis
    std::vector<double> values; ///< (m+2)^2, index i + (m+2) j, x = i h, y = j h

    PdeGrid() = default;
    PdeGrid(double b_, int m_);
    int n() const noexcept { return m + 2; }
    double step() const noexcept { return b / (m + 1); }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i + n() * j)]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i + n() * j)]; }
    /// Bilinear interpolation at (x, y) in [0,b]^2.
    double interpolate(double x, double y) const;
    void write_csv(std::ostream& out) const;
};

/// Boundary data of the problem.
double pde_boundary(double x, double y, double b);

/// The product reference xy/b^2 on the grid.
PdeGrid product_reference(double b, int m);

struct PdeSystem {
    double b = 0.5;
    int m = 0;
    Stencil stencil = Stencil::nine_point;
    CsrMatrix matrix; ///< unknown (i,j) -> row (i-1) + m (j-1)
    std::vector<double> rhs;
};

PdeSystem pde_assemble(double b, int m, Stencil stencil = Stencil::nine_point);

struct PdeSolution {
    PdeGrid grid;
    SolveStats stats;
    Stencil stencil = Stencil::nine_point;
    double symmetry_defect = 0.0;   ///< max |f(i,j) - f(j,i)|
    double boundary_defect = 0.0;   ///< max deviation from the Dirichlet data
    bool in_unit_interval = false;  ///< 0 <= f <= 1 everywhere
    bool monotone = false;          ///< nondecreasing in x and in y
};

/// Solves the assembled system to relative residual tol.
PdeSolution pde_solve(const PdeSystem& system, double tol = 1e-10, Execution exec = Execution::parallel,
                      int max_iter = 20000);

/// Nine-point solve; falls back to the seven-point stencil when the
/// solution leaves [0,1] or is not monotone.
PdeSolution pde_solve_checked(double b, int m, double tol = 1e-10, Execution exec = Execution::parallel);

/// r(x) = f(x,x) b^2 / x^2 at each abscissa; equals 1 for the product
/// reference. Abscissae below one grid step are rejected.
std::vector<double> corner_ratio(const PdeGrid& grid, std::span<const double> xs);

/// max |f_coarse - f_fine| over the coarse nodes; needs m_fine + 1 = 2 (m_coarse + 1).
double grid_difference(const PdeGrid& coarse, const PdeGrid& fine);

struct CornerReport {
    std::vector<double> xs;         ///< b/64, b/32, b/16, b/8
    std::vector<double> ratio;      ///< on the fine grid
    std::vector<double> ratio_coarse;
    double extrapolated = 0.0;      ///< 2 r(b/64) - r(b/32)
    double refinement_error = 0.0;  ///< max |r_m - r_2m| over xs
};

CornerReport corner_report(const PdeGrid& coarse, const PdeGrid& fine);

} // namespace cml
