#include "rlab/riesz.hpp"

#include <cmath>

namespace rlab {

namespace {

// Componentwise compensated vector accumulator.
struct VecKahan {
    Kahan c[kMaxDim];
    int dim;
    explicit VecKahan(int d) : dim(d) {}
    void add(const Vec& v) {
        for (int i = 0; i < dim; ++i) c[i].add(v.v[i]);
    }
    Vec value() const {
        Vec out(dim);
        for (int i = 0; i < dim; ++i) out[i] = c[i].value();
        return out;
    }
};

}  // namespace

Vec riesz_truncated(const AtomicMeasure& mu, const Vec& x, double eps) {
    if (!(eps > 0)) throw std::runtime_error("riesz_truncated: eps > 0");
    const int n = mu.n();
    VecKahan acc(mu.dim());
    for (int j = 0; j < mu.size(); ++j) {
        Vec diff = x - mu.position_vec(j);
        if (diff.norm() > eps) {
            Vec k = riesz_kernel(diff, n);
            k *= mu.weight(j);
            acc.add(k);
        }
    }
    return acc.value();
}

Vec riesz_pv_atomic(const AtomicMeasure& mu, int i) {
    const int n = mu.n();
    const Vec x = mu.position_vec(i);
    VecKahan acc(mu.dim());
    for (int j = 0; j < mu.size(); ++j) {
        if (j == i) continue;
        Vec diff = x - mu.position_vec(j);
        Vec k = riesz_kernel(diff, n);
        k *= mu.weight(j);
        acc.add(k);
    }
    return acc.value();
}

double riesz_max(const AtomicMeasure& mu, const Vec& x, const std::vector<double>& eps_grid) {
    double best = 0;
    for (double e : eps_grid) best = std::max(best, riesz_truncated(mu, x, e).norm());
    return best;
}

double riesz_max(const AtomicMeasure& mu, const Vec& x) {
    std::vector<double> grid;
    grid.reserve(static_cast<size_t>(mu.size()) * 2 + 1);
    for (int j = 0; j < mu.size(); ++j) {
        double d = dist(x.v, mu.position(j), mu.dim());
        if (d > 0) {
            grid.push_back(d * (1 - 1e-15) - 1e-300);
            grid.push_back(d * (1 + 1e-15));
        }
    }
    if (grid.empty()) return 0;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return riesz_max(mu, x, grid);
}

std::vector<Vec> riesz_pv_field(const AtomicMeasure& mu, const RieszFieldOptions& opt) {
    std::vector<Vec> out(static_cast<size_t>(mu.size()));
    if (opt.mode == RieszMode::exact) {
        for (int i = 0; i < mu.size(); ++i) out[static_cast<size_t>(i)] = riesz_pv_atomic(mu, i);
    } else {
        TreeCodeIndex idx(mu, opt.theta_open);
        for (int i = 0; i < mu.size(); ++i)
            out[static_cast<size_t>(i)] = idx.eval(mu.position_vec(i), 0, i);
    }
    return out;
}

double riesz_l2_norm(const AtomicMeasure& mu, const std::vector<Vec>& pv_field) {
    Kahan acc;
    for (int i = 0; i < mu.size(); ++i) acc.add(mu.weight(i) * pv_field[static_cast<size_t>(i)].norm2());
    return acc.value();
}

double riesz_l2_norm(const AtomicMeasure& mu, const RieszFieldOptions& opt) {
    return riesz_l2_norm(mu, riesz_pv_field(mu, opt));
}

// ---------------------------------------------------------------------------
// Treecode
// ---------------------------------------------------------------------------

namespace {

inline int tri_index(int a, int b) {  // a <= b, packed upper triangle
    return b * (b + 1) / 2 + a;
}

}  // namespace

TreeCodeIndex::TreeCodeIndex(const AtomicMeasure& mu, double theta_open)
    : mu_(&mu), theta_open_(theta_open) {
    if (!(theta_open > 0) || !(theta_open < 1))
        throw std::runtime_error("treecode: theta_open in (0,1)");
    const auto& perm = mu.tree().permutation();
    pos_of_atom_.resize(perm.size());
    for (size_t p = 0; p < perm.size(); ++p) pos_of_atom_[static_cast<size_t>(perm[p])] = static_cast<int>(p);

    // per-node second moments about the mass centroid
    const auto& nodes = mu.tree().nodes();
    const int d = mu.dim();
    quad_.assign(nodes.size(), {});
    for (size_t ni = 0; ni < nodes.size(); ++ni) {
        const auto& nd = nodes[ni];
        auto& q = quad_[ni];
        for (int k = nd.begin; k < nd.end; ++k) {
            int j = perm[static_cast<size_t>(k)];
            const double* y = mu.position(j);
            double w = mu.weight(j);
            for (int b = 0; b < d; ++b)
                for (int a = 0; a <= b; ++a)
                    q[static_cast<size_t>(tri_index(a, b))] +=
                        w * (y[a] - nd.com[a]) * (y[b] - nd.com[b]);
        }
    }
}

void TreeCodeIndex::walk(int node, const double* x, double eps, int exclude_pos, Vec& acc) const {
    const auto& nd = mu_->tree().nodes()[static_cast<size_t>(node)];
    const int d = mu_->dim();
    const int n = mu_->n();
    const bool node_has_excluded = exclude_pos >= nd.begin && exclude_pos < nd.end;

    double dx2 = dist2(x, nd.com, d);
    double diameter = 2 * nd.radius;
    double dcom = std::sqrt(dx2);
    double bbox_d2 = 0;
    for (int i = 0; i < d; ++i) {
        double t = x[i] < nd.bbox_lo[i] ? nd.bbox_lo[i] - x[i]
                                        : (x[i] > nd.bbox_hi[i] ? x[i] - nd.bbox_hi[i] : 0.0);
        bbox_d2 += t * t;
    }

    // far-field acceptance: no excluded atom inside, every node atom beyond
    // the truncation radius (bbox distance is a lower bound), and the node
    // small relative to its distance. The node contributes its monopole about
    // the centroid plus the quadrupole correction (the dipole vanishes).
    if (!node_has_excluded && dcom > 0 && diameter < theta_open_ * dcom &&
        std::sqrt(bbox_d2) > eps) {
        Vec z(d);
        for (int i = 0; i < d; ++i) z[i] = x[i] - nd.com[i];
        Vec k = riesz_kernel(z, n);
        k *= nd.mass;
        acc += k;

        const auto& q = quad_[static_cast<size_t>(node)];
        double qz[kMaxDim] = {0};
        double trq = 0, zqz = 0;
        for (int b = 0; b < d; ++b) {
            trq += q[static_cast<size_t>(tri_index(b, b))];
            for (int a = 0; a < d; ++a) {
                double qab = a <= b ? q[static_cast<size_t>(tri_index(a, b))]
                                    : q[static_cast<size_t>(tri_index(b, a))];
                qz[b] += qab * z[a];
            }
            zqz += qz[b] * z[b];
        }
        double r2 = z.norm2();
        double rm3 = std::pow(r2, -0.5 * (n + 3));
        double rm5 = std::pow(r2, -0.5 * (n + 5));
        double c1 = -(n + 1.0) * rm3;
        double c2 = 0.5 * (n + 1.0) * (n + 3.0) * rm5 * zqz;
        for (int i = 0; i < d; ++i) acc[i] += c1 * (qz[i] + 0.5 * trq * z[i]) + c2 * z[i];
        return;
    }
    if (nd.left < 0) {
        const auto& perm = mu_->tree().permutation();
        for (int p = nd.begin; p < nd.end; ++p) {
            if (p == exclude_pos) continue;
            int j = perm[static_cast<size_t>(p)];
            Vec diff(d);
            const double* y = mu_->position(j);
            for (int i = 0; i < d; ++i) diff[i] = x[i] - y[i];
            double r = diff.norm();
            if (r <= eps || r == 0) continue;
            Vec k = riesz_kernel(diff, n);
            k *= mu_->weight(j);
            acc += k;
        }
        return;
    }
    walk(nd.left, x, eps, exclude_pos, acc);
    walk(nd.right, x, eps, exclude_pos, acc);
}

Vec TreeCodeIndex::eval(const Vec& x, double eps, int exclude_atom) const {
    Vec acc(mu_->dim());
    int expos = exclude_atom >= 0 ? pos_of_atom_[static_cast<size_t>(exclude_atom)] : -1;
    walk(0, x.v, eps, expos, acc);
    return acc;
}

double field_l2_relative_error(const AtomicMeasure& mu, const std::vector<Vec>& approx,
                               const std::vector<Vec>& exact) {
    Kahan num, den;
    for (int i = 0; i < mu.size(); ++i) {
        num.add(mu.weight(i) * (approx[static_cast<size_t>(i)] - exact[static_cast<size_t>(i)]).norm2());
        den.add(mu.weight(i) * exact[static_cast<size_t>(i)].norm2());
    }
    return den.value() > 0 ? std::sqrt(num.value() / den.value()) : std::sqrt(num.value());
}

// ---------------------------------------------------------------------------
// Martingale projections
// ---------------------------------------------------------------------------

namespace {

double cube_mean(const Lattice& lat, const std::vector<double>& f, int cube_id) {
    const Cube& q = lat.cube(cube_id);
    Kahan num;
    for (int a : q.atoms) num.add(lat.measure().weight(a) * f[static_cast<size_t>(a)]);
    return q.mass > 0 ? num.value() / q.mass : 0.0;
}

}  // namespace

std::vector<std::pair<int, double>> haar_delta(const Lattice& lat, const std::vector<double>& f,
                                               int cube_id) {
    const Cube& q = lat.cube(cube_id);
    std::vector<std::pair<int, double>> out;
    if (q.children.empty()) return out;  // leaf: zero function
    double mq = cube_mean(lat, f, cube_id);
    for (int ch : q.children) {
        double ms = cube_mean(lat, f, ch);
        for (int a : lat.cube(ch).atoms) out.emplace_back(a, ms - mq);
    }
    std::sort(out.begin(), out.end());
    return out;
}

MartingaleEnergy martingale_energy(const Lattice& lat, const std::vector<double>& f, int root_id) {
    const AtomicMeasure& mu = lat.measure();
    MartingaleEnergy out;

    const Cube& r = lat.cube(root_id);
    double mr = cube_mean(lat, f, root_id);
    Kahan lhs;
    for (int a : r.atoms) {
        double t = f[static_cast<size_t>(a)] - mr;
        lhs.add(mu.weight(a) * t * t);
    }
    out.lhs = lhs.value();

    // sum over all Q inside R of ||Delta_Q f||^2
    Kahan rhs;
    std::vector<int> stack = {root_id};
    while (!stack.empty()) {
        int cid = stack.back();
        stack.pop_back();
        const Cube& q = lat.cube(cid);
        for (int ch : q.children) stack.push_back(ch);
        if (q.children.empty()) continue;
        double mq = cube_mean(lat, f, cid);
        Kahan norm2;
        for (int ch : q.children) {
            double ms = cube_mean(lat, f, ch);
            double dv = ms - mq;
            norm2.add(lat.cube(ch).mass * dv * dv);
        }
        rhs.add(norm2.value());
    }
    out.rhs = rhs.value();
    return out;
}

// ---------------------------------------------------------------------------
// Double-integral check
// ---------------------------------------------------------------------------

DoubleIntegralCheck double_integral_check(const Lattice& lat, int cube_id, double gamma) {
    if (!(gamma > 0) || !(gamma < 1)) throw std::runtime_error("double_integral_check: gamma in (0,1)");
    const AtomicMeasure& mu = lat.measure();
    const Cube& q = lat.cube(cube_id);
    const int n = mu.n();
    const int d = mu.dim();
    const double* xq = mu.position(q.center_atom);

    // atoms of 2B_Q \ Q, in ascending index order
    std::vector<char> in_q(static_cast<size_t>(mu.size()), 0);
    for (int a : q.atoms) in_q[static_cast<size_t>(a)] = 1;
    std::vector<int> outer;
    mu.tree().for_each_in_ball(xq, 56.0 * q.r, [&](int i) {
        if (!in_q[static_cast<size_t>(i)]) outer.push_back(i);
    });
    std::sort(outer.begin(), outer.end());

    DoubleIntegralCheck out;
    Kahan lhs1;
    for (int x : outer) {
        Kahan inner;
        for (int y : q.atoms) {
            double r = dist(mu.position(x), mu.position(y), d);
            if (r > 0) inner.add(mu.weight(y) / std::pow(r, n));
        }
        double v = inner.value();
        lhs1.add(mu.weight(x) * v * v);
    }
    out.lhs1 = lhs1.value();

    Kahan lhs2;
    for (int x : q.atoms) {
        Kahan inner;
        for (int y : outer) {
            double r = dist(mu.position(x), mu.position(y), d);
            if (r > 0) inner.add(mu.weight(y) / std::pow(r, n));
        }
        double v = inner.value();
        lhs2.add(mu.weight(x) * v * v);
    }
    out.lhs2 = lhs2.value();

    Kahan rhs;
    std::vector<int> region = lat.lambda_region(cube_id, 2.0);
    for (int cid : lat.descendants_of_region(region)) {
        const Cube& p = lat.cube(cid);
        double theta2b = p.mass_2bq / std::pow(p.ell, n);
        rhs.add(std::pow(p.ell / q.ell, gamma) * theta2b * theta2b * p.mass);
    }
    out.rhs = rhs.value();

    double lhs_max = std::max(out.lhs1, out.lhs2);
    if (out.rhs > 0)
        out.constant = lhs_max / out.rhs;
    else if (lhs_max > 0)
        out.anomaly = true;
    return out;
}

}  // namespace rlab
