#include "rlab/functionals.hpp"

#include <cmath>
#include <ostream>

namespace rlab {

ScaleGrid natural_grid(const AtomicMeasure& mu, double rho) {
    double rmax = std::max(mu.diameter(), mu.r_atom() * 4);
    double rmin = std::max(mu.r_atom(), rmax * 1e-9);
    return ScaleGrid(rmin, rmax, rho);
}

double theta(const AtomicMeasure& mu, const Ball& b) {
    return ball_mass(mu, b) / std::pow(b.radius, mu.n());
}

BallStats ball_stats(const AtomicMeasure& mu, const double* center, double radius) {
    const int d = mu.dim();
    BallStats out;

    // first pass: mass and weighted centroid
    Kahan mass;
    Kahan cacc[kMaxDim];
    std::vector<int> hits;
    mu.tree().for_each_in_ball(center, radius, [&](int i) {
        hits.push_back(i);
        double w = mu.weight(i);
        mass.add(w);
        const double* p = mu.position(i);
        for (int k = 0; k < d; ++k) cacc[k].add(w * p[k]);
    });
    out.mass = mass.value();
    out.theta = out.mass / std::pow(radius, mu.n());
    if (out.mass <= 0) return out;

    double c[kMaxDim];
    for (int k = 0; k < d; ++k) c[k] = cacc[k].value() / out.mass;

    // second pass: second-moment matrix about the centroid
    double m[kMaxDim * kMaxDim] = {0};
    for (int i : hits) {
        double w = mu.weight(i);
        const double* p = mu.position(i);
        double dx[kMaxDim];
        for (int k = 0; k < d; ++k) dx[k] = p[k] - c[k];
        for (int a = 0; a < d; ++a)
            for (int b = a; b < d; ++b) m[a * d + b] += w * dx[a] * dx[b];
    }
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < a; ++b) m[a * d + b] = m[b * d + a];

    double lmin = std::max(0.0, sym_eigen_min(m, d));
    out.beta2 = std::sqrt(lmin / std::pow(radius, mu.n() + 2));
    return out;
}

double beta2(const AtomicMeasure& mu, const Ball& b) {
    return ball_stats(mu, b.center.v, b.radius).beta2;
}

double beta_wolff_energy(const AtomicMeasure& mu, const ScaleGrid& grid) {
    if (grid.r_min < mu.r_atom() * (1 - 1e-12))
        throw std::runtime_error("beta_wolff_energy: grid below atomic resolution");
    const double lw = grid.log_weight();
    std::vector<double> radii = grid.scales();
    Kahan total;
    for (int i = 0; i < mu.size(); ++i) {
        Kahan per_atom;
        for (double r : radii) {
            BallStats st = ball_stats(mu, mu.position(i), r);
            per_atom.add(st.beta2 * st.beta2 * st.theta * lw);
        }
        total.add(mu.weight(i) * per_atom.value());
    }
    return total.value();
}

double dyadic_beta_energy(const Lattice& lat) {
    const AtomicMeasure& mu = lat.measure();
    Kahan total;
    for (int cid = 0; cid < lat.cube_count(); ++cid) {
        const Cube& q = lat.cube(cid);
        BallStats st = ball_stats(mu, mu.position(q.center_atom), 56.0 * q.r);
        total.add(st.beta2 * st.beta2 * q.theta * q.mass);
    }
    return total.value();
}

EnergyBreakdown energy_E(const Lattice& lat, int cube_id, double lambda) {
    const Cube& q = lat.cube(cube_id);
    EnergyBreakdown out;
    out.exponent = 0.75;
    out.lambda = lambda;
    std::vector<int> region = lat.lambda_region(cube_id, lambda);
    std::vector<int> all = lat.descendants_of_region(region);
    Kahan total;
    for (int cid : all) {
        const Cube& p = lat.cube(cid);
        double term = std::pow(p.ell / q.ell, 0.75) * p.theta * p.theta * p.mass;
        out.contributions.emplace_back(cid, term);
        total.add(term);
    }
    out.total = total.value();
    return out;
}

double energy_layer(const Lattice& lat, int cube_id, int k, double lambda) {
    const Cube& q = lat.cube(cube_id);
    std::vector<int> fam = lat.hd_in_region(cube_id, k, lambda);
    Kahan total;
    for (int cid : fam) {
        const Cube& p = lat.cube(cid);
        total.add(std::sqrt(p.ell / q.ell) * p.theta * p.theta * p.mass);
    }
    return total.value();
}

EnergyBreakdown energy_EH(const Lattice& lat, int cube_id, double lambda) {
    const Cube& q = lat.cube(cube_id);
    EnergyBreakdown out;
    out.exponent = 0.75;
    out.lambda = lambda;
    Kahan total;
    const int k_cap = lat.levels();  // hd^k empty beyond the level span
    for (int k = 0; k <= k_cap; ++k) {
        std::vector<int> fam = lat.hd_in_region(cube_id, k, lambda);
        // layers are nested in k: every hd^{k+1} member sits inside a maximal
        // hd^k member, so an empty layer ends the sum
        if (fam.empty()) break;
        for (int cid : fam) {
            const Cube& p = lat.cube(cid);
            double term = std::pow(p.ell / q.ell, 0.75) * p.theta * p.theta * p.mass;
            out.contributions.emplace_back(cid, term);
            total.add(term);
        }
    }
    out.total = total.value();
    return out;
}

EnergyBreakdown energy_Einf(const Lattice& lat, int cube_id, double lambda) {
    EnergyBreakdown out;
    out.exponent = 0.5;
    out.lambda = lambda;
    const Cube& qq = lat.cube(cube_id);
    const int k_cap = lat.levels();
    for (int k = 1; k <= k_cap; ++k) {
        std::vector<int> fam = lat.hd_in_region(cube_id, k, lambda);
        if (fam.empty()) break;
        Kahan layer;
        for (int cid : fam) {
            const Cube& p = lat.cube(cid);
            layer.add(std::sqrt(p.ell / qq.ell) * p.theta * p.theta * p.mass);
        }
        if (layer.value() > out.total) {
            out.total = layer.value();
            out.achieving_k = k;
        }
    }
    if (out.achieving_k > 0) {
        const Cube& q = lat.cube(cube_id);
        for (int cid : lat.hd_in_region(cube_id, out.achieving_k, lambda)) {
            const Cube& p = lat.cube(cid);
            out.contributions.emplace_back(cid, std::sqrt(p.ell / q.ell) * p.theta * p.theta * p.mass);
        }
    }
    return out;
}

double sigma(const Lattice& lat, const std::vector<int>& cubes, double p) {
    Kahan acc;
    for (int cid : cubes) {
        const Cube& q = lat.cube(cid);
        acc.add(std::pow(q.theta, p) * q.mass);
    }
    return acc.value();
}

double wolff_38_energy(const AtomicMeasure& mu, const ScaleGrid& grid) {
    const double lw = grid.log_weight();
    const double expn = mu.n() - 0.375;
    std::vector<double> radii = grid.scales();
    Kahan total;
    for (int i = 0; i < mu.size(); ++i) {
        Kahan per_atom;
        for (double r : radii) {
            double m = mu.tree().mass_in_ball(mu.position(i), r);
            double t = m / std::pow(r, expn);
            per_atom.add(t * t * lw);
        }
        total.add(mu.weight(i) * per_atom.value());
    }
    return total.value();
}

double jones_wolff_potential(const AtomicMeasure& mu, const double* x, const ScaleGrid& grid) {
    const double lw = grid.log_weight();
    double sup_theta = 0;
    Kahan beta_term;
    for (double r : grid.scales()) {
        BallStats st = ball_stats(mu, x, r);
        sup_theta = std::max(sup_theta, st.theta);
        beta_term.add(st.beta2 * st.beta2 * st.theta * lw);
    }
    return sup_theta + std::sqrt(std::max(0.0, beta_term.value()));
}

double beta2_bruteforce(const AtomicMeasure& mu, const Ball& b, int directions, int refine_rounds) {
    const int d = mu.dim();
    std::vector<int> hits;
    mu.tree().for_each_in_ball(b.center.v, b.radius, [&](int i) { hits.push_back(i); });
    if (hits.empty()) return 0.0;

    // for a unit normal u and plane offset optimized analytically (weighted
    // mean of projections), the in-ball misfit is sum w (proj - mean)^2
    auto misfit = [&](const double* u) {
        Kahan mean, mass;
        for (int i : hits) {
            double pr = 0;
            const double* p = mu.position(i);
            for (int k = 0; k < d; ++k) pr += p[k] * u[k];
            mean.add(mu.weight(i) * pr);
            mass.add(mu.weight(i));
        }
        double mbar = mean.value() / mass.value();
        Kahan s;
        for (int i : hits) {
            double pr = 0;
            const double* p = mu.position(i);
            for (int k = 0; k < d; ++k) pr += p[k] * u[k];
            s.add(mu.weight(i) * (pr - mbar) * (pr - mbar));
        }
        return s.value();
    };

    double best = std::numeric_limits<double>::infinity();

    if (d == 2) {
        double best_angle = 0;
        for (int i = 0; i < directions; ++i) {
            double a = M_PI * i / directions;
            double u[2] = {std::cos(a), std::sin(a)};
            double v = misfit(u);
            if (v < best) {
                best = v;
                best_angle = a;
            }
        }
        // golden-section refinement around the best angle
        double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        double step = M_PI / directions;
        double lo = best_angle - step, hi = best_angle + step;
        for (int r = 0; r < 60 * std::max(1, refine_rounds); ++r) {
            double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
            double u1[2] = {std::cos(m1), std::sin(m1)};
            double u2[2] = {std::cos(m2), std::sin(m2)};
            if (misfit(u1) < misfit(u2))
                hi = m2;
            else
                lo = m1;
        }
        double mid = 0.5 * (lo + hi);
        double u[2] = {std::cos(mid), std::sin(mid)};
        best = std::min(best, misfit(u));
    } else if (d == 3) {
        // Fibonacci sphere scan, then shrinking local grid in (theta, phi)
        double best_t = 0, best_p = 0;
        double ga = M_PI * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < directions; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / directions;
            double rxy = std::sqrt(std::max(0.0, 1 - z * z));
            double a = ga * i;
            double u[3] = {rxy * std::cos(a), rxy * std::sin(a), z};
            double v = misfit(u);
            if (v < best) {
                best = v;
                best_t = std::acos(std::clamp(z, -1.0, 1.0));
                best_p = std::atan2(u[1], u[0]);
            }
        }
        double span_t = 3.0 / std::sqrt(static_cast<double>(directions)) * M_PI;
        double span_p = span_t * 2;
        for (int round = 0; round < 8 + 2 * refine_rounds; ++round) {
            double t0 = best_t, p0 = best_p;
            const int g = 12;
            for (int it = -g; it <= g; ++it) {
                for (int ip = -g; ip <= g; ++ip) {
                    double t = t0 + span_t * it / g, p = p0 + span_p * ip / g;
                    double u[3] = {std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)};
                    double v = misfit(u);
                    if (v < best) {
                        best = v;
                        best_t = t;
                        best_p = p;
                    }
                }
            }
            span_t /= 3;
            span_p /= 3;
        }
    } else {
        throw std::runtime_error("beta2_bruteforce: only d in {2,3}");
    }
    return std::sqrt(std::max(0.0, best) / std::pow(b.radius, mu.n() + 2));
}

void write_energy_csv(std::ostream& os, const EnergyBreakdown& e) {
    os << "cube_id,contribution\n";
    for (const auto& [cid, v] : e.contributions) os << cid << ',' << fmt_double(v) << '\n';
}

}  // namespace rlab
