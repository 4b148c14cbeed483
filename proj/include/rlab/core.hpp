#ifndef RLAB_CORE_HPP
#define RLAB_CORE_HPP

// Small numeric foundation shared by every module: fixed-capacity vectors for
// points in R^d (d <= 8 at desk scale), compensated summation, a deterministic
// RNG, and a symmetric eigensolver sized for (n+1)x(n+1) moment matrices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlab {

constexpr int kMaxDim = 8;

struct Vec {
    double v[kMaxDim] = {0, 0, 0, 0, 0, 0, 0, 0};
    int dim = 0;

    Vec() = default;
    explicit Vec(int d) : dim(d) {}
    Vec(std::initializer_list<double> xs) {
        dim = static_cast<int>(xs.size());
        int i = 0;
        for (double x : xs) v[i++] = x;
    }
    static Vec from(const double* p, int d) {
        Vec r(d);
        std::memcpy(r.v, p, sizeof(double) * static_cast<size_t>(d));
        return r;
    }

    double& operator[](int i) { return v[i]; }
    double operator[](int i) const { return v[i]; }

    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < dim; ++i) v[i] += o.v[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < dim; ++i) v[i] -= o.v[i];
        return *this;
    }
    Vec& operator*=(double t) {
        for (int i = 0; i < dim; ++i) v[i] *= t;
        return *this;
    }
    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(double t, Vec a) { return a *= t; }

    double norm2() const {
        double s = 0;
        for (int i = 0; i < dim; ++i) s += v[i] * v[i];
        return s;
    }
    double norm() const { return std::sqrt(norm2()); }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (int i = 0; i < a.dim; ++i) s += a.v[i] * b.v[i];
    return s;
}

inline double dist2(const double* a, const double* b, int d) {
    double s = 0;
    for (int i = 0; i < d; ++i) {
        double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

inline double dist(const double* a, const double* b, int d) { return std::sqrt(dist2(a, b, d)); }
inline double dist(const Vec& a, const Vec& b) { return dist(a.v, b.v, a.dim); }

// Neumaier compensated accumulator. Summation order is fixed by the caller,
// which keeps reductions reproducible to the last bit on a given platform.
struct Kahan {
    double sum = 0.0;
    double comp = 0.0;
    void add(double x) {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + comp; }
};

// SplitMix64: tiny deterministic RNG for instance generation and tests.
struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}
    uint64_t next_u64() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    // uniform in [0,1)
    double next_f01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    // uniform in [a,b)
    double uniform(double a, double b) { return a + (b - a) * next_f01(); }
    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }
};

// FNV-1a, used for determinism hashes of serialized artifacts.
struct Fnv1a {
    uint64_t h = 1469598103934665603ull;
    void add(const void* data, size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    void add(const std::string& s) { add(s.data(), s.size()); }
};

// ---------------------------------------------------------------------------
// Symmetric eigenvalues (row-major dense d x d, d <= kMaxDim).
// Closed forms for d <= 3, cyclic Jacobi otherwise.
// ---------------------------------------------------------------------------

namespace detail {

inline void jacobi_eigenvalues(double* a, int d, double* eval) {
    // cyclic Jacobi with fixed sweep order; converges to ~1e-14 relative
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) off += a[i * d + j] * a[i * d + j];
        if (off < 1e-28) break;
        for (int p = 0; p < d - 1; ++p) {
            for (int q = p + 1; q < d; ++q) {
                double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[p * d + p], aqq = a[q * d + q];
                double tau = (aqq - app) / (2 * apq);
                double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1 + tau * tau));
                double c = 1 / std::sqrt(1 + t * t), s = t * c;
                for (int k = 0; k < d; ++k) {
                    double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    for (int i = 0; i < d; ++i) eval[i] = a[i * d + i];
    std::sort(eval, eval + d);
}

}  // namespace detail

// Smallest eigenvalue of a symmetric positive-semidefinite matrix.
inline double sym_eigen_min(const double* m, int d) {
    if (d == 1) return m[0];
    if (d == 2) {
        double a = m[0], b = m[1], c = m[3];
        double tr = a + c;
        double disc = std::sqrt(std::max(0.0, (a - c) * (a - c) + 4 * b * b));
        return 0.5 * (tr - disc);
    }
    if (d == 3) {
        // trigonometric closed form (Smith), stable for PSD moment matrices
        double a = m[0], b = m[4], c = m[8];
        double de = m[1], f = m[5], e = m[2];
        double p1 = de * de + e * e + f * f;
        if (p1 < 1e-300) return std::min({a, b, c});
        double q = (a + b + c) / 3.0;
        double p2 = (a - q) * (a - q) + (b - q) * (b - q) + (c - q) * (c - q) + 2 * p1;
        double p = std::sqrt(p2 / 6.0);
        // r = det((M - q I)/p) / 2, clamped into [-1,1]
        double m00 = (a - q) / p, m11 = (b - q) / p, m22 = (c - q) / p;
        double m01 = de / p, m02 = e / p, m12 = f / p;
        double detB = m00 * (m11 * m22 - m12 * m12) - m01 * (m01 * m22 - m12 * m02) +
                      m02 * (m01 * m12 - m11 * m02);
        double r = std::clamp(detB / 2.0, -1.0, 1.0);
        double phi = std::acos(r) / 3.0;
        // eigenvalues: q + 2p cos(phi + 2k pi/3); smallest at k = 1 shift
        double eig_min = q + 2 * p * std::cos(phi + 2.0 * M_PI / 3.0);
        return eig_min;
    }
    double buf[kMaxDim * kMaxDim];
    std::memcpy(buf, m, sizeof(double) * static_cast<size_t>(d * d));
    double ev[kMaxDim];
    detail::jacobi_eigenvalues(buf, d, ev);
    return ev[0];
}

// Unit eigenvector for the smallest eigenvalue, via a few inverse-power
// iterations on (M - lambda I + shift). Only needed by tests and diagnostics.
Vec sym_eigen_min_vector(const double* m, int d);

// Shortest round-trip decimal text for a double (std::to_chars).
std::string fmt_double(double x);

// Parse helpers (throw std::runtime_error on malformed input).
double parse_double(const std::string& s);

}  // namespace rlab

#endif
