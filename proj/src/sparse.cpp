#include "cml/sparse.hpp"

#include <cmath>
#include <stdexcept>

#include "cml/error.hpp"

namespace cml {

double CsrMatrix::diagonal(int r) const {
    for (int k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
        if (col[static_cast<std::size_t>(k)] == r) return val[static_cast<std::size_t>(k)];
    }
    return 0.0;
}

void spmv(const CsrMatrix& a, std::span<const double> x, std::span<double> y, Execution exec) {
    const int n = a.rows;
    const int* rp = a.row_ptr.data();
    const int* ci = a.col.data();
    const double* av = a.val.data();
    const double* xv = x.data();
    double* yv = y.data();
    if (exec == Execution::serial) {
        for (int r = 0; r < n; ++r) {
            double s = 0.0;
            for (int k = rp[r]; k < rp[r + 1]; ++k) s += av[k] * xv[ci[k]];
            yv[r] = s;
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int k = rp[r]; k < rp[r + 1]; ++k) s += av[k] * xv[ci[k]];
        yv[r] = s;
    }
}

double dot(std::span<const double> u, std::span<const double> v, Execution exec) {
    const std::size_t n = u.size();
    const std::size_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<double> part(chunks, 0.0);
    auto chunk_sum = [&](std::size_t c) {
        const std::size_t lo = c * kReduceChunk;
        const std::size_t hi = std::min(n, lo + kReduceChunk);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += u[i] * v[i];
        return s;
    };
    if (exec == Execution::serial) {
        for (std::size_t c = 0; c < chunks; ++c) part[c] = chunk_sum(c);
    } else {
        const long long nc = static_cast<long long>(chunks);
#pragma omp parallel for schedule(static)
        for (long long c = 0; c < nc; ++c) part[static_cast<std::size_t>(c)] = chunk_sum(static_cast<std::size_t>(c));
    }
    double s = 0.0;
    for (double p : part) s += p;
    return s;
}

namespace {

// y = x + alpha * z, elementwise
void axpy_into(std::vector<double>& y, const std::vector<double>& x, double alpha, const std::vector<double>& z,
               Execution exec) {
    const long long n = static_cast<long long>(y.size());
    if (exec == Execution::serial) {
        for (long long i = 0; i < n; ++i) y[i] = x[i] + alpha * z[i];
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) y[i] = x[i] + alpha * z[i];
}

void scale_into(std::vector<double>& y, const std::vector<double>& d, const std::vector<double>& x, Execution exec) {
    const long long n = static_cast<long long>(y.size());
    if (exec == Execution::serial) {
        for (long long i = 0; i < n; ++i) y[i] = d[i] * x[i];
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) y[i] = d[i] * x[i];
}

} // namespace

SolveStats bicgstab(const CsrMatrix& a, std::span<const double> rhs, std::vector<double>& x, double tol,
                    int max_iter, Execution exec) {
    const auto n = static_cast<std::size_t>(a.rows);
    if (rhs.size() != n || x.size() != n) throw PreconditionError("bicgstab: dimension mismatch");
    std::vector<double> inv_diag(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.diagonal(static_cast<int>(i));
        inv_diag[i] = d != 0.0 ? 1.0 / d : 1.0;
    }

    std::vector<double> r(n), r0(n), p(n, 0.0), v(n, 0.0), s(n), t(n), ph(n), sh(n), ax(n);
    spmv(a, x, ax, exec);
    for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - ax[i];
    r0 = r;
    const double bnorm = std::sqrt(dot(rhs, rhs, exec));
    const double scale = bnorm > 0.0 ? bnorm : 1.0;

    SolveStats st;
    st.rel_residual = std::sqrt(dot(r, r, exec)) / scale;
    if (st.rel_residual <= tol) {
        st.converged = true;
        return st;
    }
    double rho = 1.0, alpha = 1.0, omega = 1.0;
    for (int it = 1; it <= max_iter; ++it) {
        const double rho_new = dot(r0, r, exec);
        if (rho_new == 0.0) break;
        const double beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
        scale_into(ph, inv_diag, p, exec);
        spmv(a, ph, v, exec);
        alpha = rho / dot(r0, v, exec);
        axpy_into(s, r, -alpha, v, exec);
        scale_into(sh, inv_diag, s, exec);
        spmv(a, sh, t, exec);
        const double tt = dot(t, t, exec);
        omega = tt > 0.0 ? dot(t, s, exec) / tt : 0.0;
        for (std::size_t i = 0; i < n; ++i) x[i] += alpha * ph[i] + omega * sh[i];
        axpy_into(r, s, -omega, t, exec);
        st.iterations = it;
        st.rel_residual = std::sqrt(dot(r, r, exec)) / scale;
        if (st.rel_residual <= tol) break;
        if (omega == 0.0) break;
    }
    // Recompute the true residual; the recursive one drifts.
    spmv(a, x, ax, exec);
    for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - ax[i];
    st.rel_residual = std::sqrt(dot(r, r, exec)) / scale;
    st.converged = st.rel_residual <= tol;
    return st;
}

} // namespace cml
