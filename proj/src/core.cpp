#include "rlab/core.hpp"

#include <charconv>
#include <cstdio>

namespace rlab {

Vec sym_eigen_min_vector(const double* m, int d) {
    double lam = sym_eigen_min(m, d);
    // inverse power iteration on (M - lam I + eps I); deterministic start
    double scale = 0;
    for (int i = 0; i < d; ++i) scale = std::max(scale, std::abs(m[i * d + i]));
    double eps = std::max(scale, 1.0) * 1e-12;
    double a[kMaxDim * kMaxDim];
    for (int i = 0; i < d * d; ++i) a[i] = m[i];
    for (int i = 0; i < d; ++i) a[i * d + i] = m[i * d + i] - lam + eps;

    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = 1.0 / std::sqrt(static_cast<double>(d));
    for (int it = 0; it < 64; ++it) {
        // solve a y = x by Gaussian elimination with partial pivoting
        double g[kMaxDim * (kMaxDim + 1)];
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) g[i * (d + 1) + j] = a[i * d + j];
            g[i * (d + 1) + d] = x[i];
        }
        for (int col = 0; col < d; ++col) {
            int piv = col;
            for (int r = col + 1; r < d; ++r)
                if (std::abs(g[r * (d + 1) + col]) > std::abs(g[piv * (d + 1) + col])) piv = r;
            if (piv != col)
                for (int j = col; j <= d; ++j) std::swap(g[col * (d + 1) + j], g[piv * (d + 1) + j]);
            double pv = g[col * (d + 1) + col];
            if (std::abs(pv) < 1e-300) pv = 1e-300;
            for (int r = col + 1; r < d; ++r) {
                double f = g[r * (d + 1) + col] / pv;
                for (int j = col; j <= d; ++j) g[r * (d + 1) + j] -= f * g[col * (d + 1) + j];
            }
        }
        Vec y(d);
        for (int r = d - 1; r >= 0; --r) {
            double s = g[r * (d + 1) + d];
            for (int j = r + 1; j < d; ++j) s -= g[r * (d + 1) + j] * y[j];
            double pv = g[r * (d + 1) + r];
            if (std::abs(pv) < 1e-300) pv = 1e-300;
            y[r] = s / pv;
        }
        double nrm = y.norm();
        if (nrm < 1e-300) break;
        for (int i = 0; i < d; ++i) y[i] /= nrm;
        double delta = 0;
        for (int i = 0; i < d; ++i) delta = std::max(delta, std::abs(std::abs(y[i]) - std::abs(x[i])));
        x = y;
        if (delta < 1e-15) break;
    }
    return x;
}

std::string fmt_double(double x) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
    double x = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc()) throw std::runtime_error("bad float literal: '" + s + "'");
    return x;
}

}  // namespace rlab
