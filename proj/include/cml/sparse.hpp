#pragma once

// CSR matrix, its kernels in serial and OpenMP form, and a Jacobi
// preconditioned BiCGSTAB. Reductions are summed over fixed chunks in a
// fixed order, so both forms give bit-identical results.

#include <cstddef>
#include <span>
#include <vector>

#include "cml/batch.hpp"

namespace cml {

struct CsrMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr{0};
    std::vector<int> col;
    std::vector<double> val;

    std::size_t nnz() const noexcept { return val.size(); }
    /// Rows must be appended in order; entries of one row in any order.
    void push(int c, double v) {
        col.push_back(c);
        val.push_back(v);
    }
    void end_row() {
        row_ptr.push_back(static_cast<int>(col.size()));
        ++rows;
    }
    double diagonal(int r) const;
};

inline constexpr std::size_t kReduceChunk = 4096;

void spmv(const CsrMatrix& a, std::span<const double> x, std::span<double> y, Execution exec);
double dot(std::span<const double> u, std::span<const double> v, Execution exec);

struct SolveStats {
    int iterations = 0;
    double rel_residual = 0.0;
    bool converged = false;
};

/// Solves a x = rhs starting from the given x. Stops once
/// ||rhs - a x|| <= tol ||rhs|| or after max_iter iterations.
SolveStats bicgstab(const CsrMatrix& a, std::span<const double> rhs, std::vector<double>& x, double tol,
                    int max_iter, Execution exec);

} // namespace cml
