#include "rlab/lattice.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace rlab {

namespace {

int theta_bucket(double ratio, int a0, int n) {
    // Theta(Q) = A0^{kn} with mu(2B_Q)/ell(Q)^n in [A0^{kn}, A0^{(k+1)n});
    // the 1e-9 nudge keeps exact bucket endpoints in their own bucket.
    double x = std::log(ratio) / (n * std::log(static_cast<double>(a0)));
    return static_cast<int>(std::floor(x + 1e-9));
}

}  // namespace

Lattice::Lattice(const AtomicMeasure& mu, LatticeParams params) : mu_(&mu), params_(params) {
    if (params_.a0 < 2) throw std::runtime_error("lattice: A0 >= 2");
    if (params_.c0 < 1) throw std::runtime_error("lattice: C0 >= 1");
    if (params_.k_max < 1) throw std::runtime_error("lattice: k_max >= 1");
    base_scale_ = mu.diameter() > 0 ? mu.diameter() : std::max(mu.r_atom(), 1e-12);
    build();
}

void Lattice::finalize_cube_geometry(Cube& q) {
    const AtomicMeasure& mu = *mu_;
    const int d = mu.dim();
    const int n = mu.n();
    double scale_k = scale(q.level);
    q.r = 0.5 * scale_k;
    q.ell = 56.0 * params_.c0 * scale_k;

    Kahan mass;
    for (int i = 0; i < d; ++i) {
        q.bbox_lo[i] = std::numeric_limits<double>::infinity();
        q.bbox_hi[i] = -std::numeric_limits<double>::infinity();
    }
    for (int a : q.atoms) {
        mass.add(mu.weight(a));
        const double* p = mu.position(a);
        for (int i = 0; i < d; ++i) {
            q.bbox_lo[i] = std::min(q.bbox_lo[i], p[i]);
            q.bbox_hi[i] = std::max(q.bbox_hi[i], p[i]);
        }
    }
    q.mass = mass.value();

    const double* xq = mu.position(q.center_atom);
    q.mass_2bq = mu.tree().mass_in_ball(xq, 56.0 * q.r);
    double ratio = q.mass_2bq / std::pow(q.ell, n);
    q.theta_k = theta_bucket(ratio, params_.a0, n);
    q.theta = std::pow(static_cast<double>(params_.a0), static_cast<double>(q.theta_k) * n);

    double mb = mu.tree().mass_in_ball(xq, q.r);
    double m100 = mu.tree().mass_in_ball(xq, 100.0 * q.r);
    q.doubling = m100 <= params_.c0 * mb;
}

void Lattice::build() {
    const AtomicMeasure& mu = *mu_;
    const int n_atoms = mu.size();

    // root: all atoms, centered at the atom of maximal local mass
    std::vector<double> local_mass(static_cast<size_t>(n_atoms));
    auto compute_local_mass = [&](double radius) {
        for (int i = 0; i < n_atoms; ++i)
            local_mass[static_cast<size_t>(i)] = mu.tree().mass_in_ball(mu.position(i), radius);
    };
    compute_local_mass(5.0 * scale(0));

    Cube root;
    root.id = 0;
    root.level = 0;
    root.parent = -1;
    root.atoms.resize(static_cast<size_t>(n_atoms));
    for (int i = 0; i < n_atoms; ++i) root.atoms[static_cast<size_t>(i)] = i;
    int best = 0;
    for (int i = 1; i < n_atoms; ++i)
        if (local_mass[static_cast<size_t>(i)] > local_mass[static_cast<size_t>(best)]) best = i;
    root.center_atom = best;
    cubes_.push_back(std::move(root));
    by_level_.push_back({0});

    const int hard_cap = params_.k_max + 80;
    int level = 0;
    while (true) {
        ++level;
        bool below_kmax = level <= params_.k_max;
        if (!below_kmax && !params_.split_to_atoms) break;
        if (level > hard_cap) break;

        // when extending past k_max, stop once every leaf is a point cluster
        if (!below_kmax) {
            bool any_split_needed = false;
            for (int cid : by_level_.back()) {
                const Cube& q = cubes_[static_cast<size_t>(cid)];
                for (int i = 0; i < mu.dim() && !any_split_needed; ++i)
                    if (q.bbox_hi[i] > q.bbox_lo[i]) any_split_needed = true;
                if (any_split_needed) break;
            }
            if (!any_split_needed) break;
        }

        double sep = 5.0 * scale(level);
        compute_local_mass(sep);

        std::vector<int> new_level;
        for (int pid : by_level_.back()) {
            Cube& parent = cubes_[static_cast<size_t>(pid)];
            // greedy separated net over the parent's members
            std::vector<int> order = parent.atoms;
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                double la = local_mass[static_cast<size_t>(a)], lb = local_mass[static_cast<size_t>(b)];
                if (la != lb) return la > lb;
                return a < b;
            });
            std::vector<int> centers;
            for (int a : order) {
                bool ok = true;
                for (int c : centers) {
                    if (dist(mu.position(a), mu.position(c), mu.dim()) < sep) {
                        ok = false;
                        break;
                    }
                }
                if (ok) centers.push_back(a);
            }
            // nearest-center assignment (ties to the earlier net point)
            std::vector<std::vector<int>> members(centers.size());
            for (int a : parent.atoms) {
                int bestc = 0;
                double bestd = std::numeric_limits<double>::infinity();
                for (size_t c = 0; c < centers.size(); ++c) {
                    double dpc = dist(mu.position(a), mu.position(centers[c]), mu.dim());
                    if (dpc < bestd) {
                        bestd = dpc;
                        bestc = static_cast<int>(c);
                    }
                }
                members[static_cast<size_t>(bestc)].push_back(a);
            }
            for (size_t c = 0; c < centers.size(); ++c) {
                if (members[c].empty()) continue;  // cannot happen: net points are members
                Cube q;
                q.id = static_cast<int>(cubes_.size());
                q.level = level;
                q.parent = pid;
                q.center_atom = centers[c];
                q.atoms = members[c];
                std::sort(q.atoms.begin(), q.atoms.end());
                cubes_[static_cast<size_t>(pid)].children.push_back(q.id);
                new_level.push_back(q.id);
                cubes_.push_back(std::move(q));
            }
        }
        by_level_.push_back(std::move(new_level));
    }

    for (auto& q : cubes_) finalize_cube_geometry(q);

    // Poisson-type coefficients, top-down: P(Q) = theta_2B(Q) + P(parent)/A0
    const int n = mu.n();
    const double cd = 4.0 * std::pow(static_cast<double>(params_.a0), n);
    for (auto& lvl : by_level_) {
        for (int cid : lvl) {
            Cube& q = cubes_[static_cast<size_t>(cid)];
            double theta2b = q.mass_2bq / std::pow(q.ell, n);
            q.p_coeff = theta2b + (q.parent >= 0 ? cubes_[static_cast<size_t>(q.parent)].p_coeff / params_.a0 : 0.0);
            q.p_doubling = q.p_coeff <= cd * theta2b;
        }
    }

    leaf_of_atom_.assign(static_cast<size_t>(n_atoms), -1);
    for (int cid : by_level_.back())
        for (int a : cubes_[static_cast<size_t>(cid)].atoms) leaf_of_atom_[static_cast<size_t>(a)] = cid;
}

int Lattice::ancestor_at_level(int atom, int level) const {
    int c = leaf_of_atom_[static_cast<size_t>(atom)];
    while (c >= 0 && cubes_[static_cast<size_t>(c)].level > level) c = cubes_[static_cast<size_t>(c)].parent;
    return c;
}

bool Lattice::contains(int ancestor, int descendant) const {
    int c = descendant;
    while (c >= 0) {
        if (c == ancestor) return true;
        c = cubes_[static_cast<size_t>(c)].parent;
    }
    return false;
}

double Lattice::dist_point_to_cube(const double* x, int cube_id) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    const int d = mu_->dim();
    double best2 = std::numeric_limits<double>::infinity();
    for (int a : q.atoms) best2 = std::min(best2, dist2(x, mu_->position(a), d));
    return std::sqrt(best2);
}

double Lattice::dist_point_to_cube_lb(const double* x, int cube_id) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    const int d = mu_->dim();
    double lb2 = 0;
    for (int i = 0; i < d; ++i) {
        double t = x[i] < q.bbox_lo[i] ? q.bbox_lo[i] - x[i]
                                       : (x[i] > q.bbox_hi[i] ? x[i] - q.bbox_hi[i] : 0.0);
        lb2 += t * t;
    }
    return std::sqrt(lb2);
}

bool Lattice::cube_within(const double* x, int cube_id, double thresh) const {
    if (dist_point_to_cube_lb(x, cube_id) > thresh) return false;
    return dist_point_to_cube(x, cube_id) <= thresh;
}

double Lattice::dist_cube_to_cube(int a, int b) const {
    const Cube& qa = cubes_[static_cast<size_t>(a)];
    const Cube& qb = cubes_[static_cast<size_t>(b)];
    const int d = mu_->dim();
    // bbox-to-bbox lower bound allows an early exact answer of 0 overlap skips
    double best2 = std::numeric_limits<double>::infinity();
    for (int i : qa.atoms) {
        const double* p = mu_->position(i);
        double lb2 = 0;
        for (int k = 0; k < d; ++k) {
            double t = p[k] < qb.bbox_lo[k] ? qb.bbox_lo[k] - p[k]
                                            : (p[k] > qb.bbox_hi[k] ? p[k] - qb.bbox_hi[k] : 0.0);
            lb2 += t * t;
        }
        if (lb2 >= best2) continue;
        for (int j : qb.atoms) best2 = std::min(best2, dist2(p, mu_->position(j), d));
    }
    return std::sqrt(best2);
}

std::vector<int> Lattice::lambda_region(int cube_id, double lambda) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    const double* xq = mu_->position(q.center_atom);
    std::vector<int> out;
    for (int cid : by_level_[static_cast<size_t>(q.level)]) {
        if (cube_within(xq, cid, lambda * q.ell)) out.push_back(cid);
    }
    return out;
}

std::vector<int> Lattice::descendants_of_region(const std::vector<int>& region) const {
    std::vector<int> out;
    std::vector<int> stack(region);
    while (!stack.empty()) {
        int c = stack.back();
        stack.pop_back();
        out.push_back(c);
        for (int ch : cubes_[static_cast<size_t>(c)].children) stack.push_back(ch);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double Lattice::region_mass(const std::vector<int>& region) const {
    Kahan acc;
    for (int cid : region) acc.add(cubes_[static_cast<size_t>(cid)].mass);
    return acc.value();
}

std::vector<int> Lattice::region_atoms(const std::vector<int>& region) const {
    std::vector<int> out;
    for (int cid : region)
        out.insert(out.end(), cubes_[static_cast<size_t>(cid)].atoms.begin(),
                   cubes_[static_cast<size_t>(cid)].atoms.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double Lattice::small_boundary_stat(int cube_id, double lambda) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    const double* xq = mu_->position(q.center_atom);
    const double width = lambda * q.ell;
    const double r35 = 3.5 * 28.0 * q.r;

    // complement atoms sorted for fixed accumulation order
    std::vector<char> in_q(static_cast<size_t>(mu_->size()), 0);
    for (int a : q.atoms) in_q[static_cast<size_t>(a)] = 1;

    Kahan collar, denom;
    for (int a = 0; a < mu_->size(); ++a) {
        const double* p = mu_->position(a);
        double d_ball = dist(p, xq, mu_->dim());
        if (d_ball <= r35) denom.add(mu_->weight(a));
        if (in_q[static_cast<size_t>(a)]) {
            // distance to the complement of Q within supp(mu)
            double dmin = std::numeric_limits<double>::infinity();
            for (int b = 0; b < mu_->size(); ++b) {
                if (in_q[static_cast<size_t>(b)]) continue;
                dmin = std::min(dmin, dist(p, mu_->position(b), mu_->dim()));
            }
            if (dmin <= width) collar.add(mu_->weight(a));
        } else if (d_ball <= r35) {
            double dq = dist_point_to_cube(p, cube_id);
            if (dq <= width) collar.add(mu_->weight(a));
        }
    }
    double dn = denom.value();
    return dn > 0 ? collar.value() / dn : 0.0;
}

std::vector<int> Lattice::hd_family(int cube_id, int k) const {
    if (k < 0) throw std::runtime_error("hd_family: k >= 0");
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    const int thresh = q.theta_k + k;
    std::vector<char> covered(cubes_.size(), 0);
    std::vector<int> out;
    for (int lvl = q.level + 1; lvl < levels(); ++lvl) {
        for (int cid : by_level_[static_cast<size_t>(lvl)]) {
            const Cube& p = cubes_[static_cast<size_t>(cid)];
            bool qualified = p.theta_k >= thresh;
            bool cov = false;
            if (p.parent >= 0) {
                const Cube& par = cubes_[static_cast<size_t>(p.parent)];
                if (par.level > q.level)
                    cov = covered[static_cast<size_t>(p.parent)] || par.theta_k >= thresh;
            }
            covered[static_cast<size_t>(cid)] = cov;
            if (qualified && !cov) out.push_back(cid);
        }
    }
    return out;
}

std::vector<int> Lattice::hd_in_region(int cube_id, int k, double lambda) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    std::vector<int> region = lambda_region(cube_id, lambda);
    std::vector<char> in_region(cubes_.size(), 0);
    for (int cid : region) in_region[static_cast<size_t>(cid)] = 1;
    std::vector<int> fam = hd_family(cube_id, k);
    std::vector<int> out;
    for (int cid : fam) {
        const Cube& p = cubes_[static_cast<size_t>(cid)];
        int anc = ancestor_at_level(p.atoms.front(), q.level);
        if (anc >= 0 && in_region[static_cast<size_t>(anc)]) out.push_back(cid);
    }
    return out;
}

double Lattice::m_k(int cube_id, int k) const {
    const Cube& q = cubes_[static_cast<size_t>(cube_id)];
    std::vector<int> fam = hd_in_region(cube_id, k, 9.0);
    double best = 0;
    for (int cid : fam) best = std::max(best, cubes_[static_cast<size_t>(cid)].ell / q.ell);
    return best;
}

Lattice::ChainDecayReport Lattice::chain_decay_report() const {
    ChainDecayReport rep;
    const int n = mu_->n();
    const int d = mu_->dim();
    auto theta100 = [&](const Cube& q) {
        double r100 = 100.0 * q.r;
        return mu_->tree().mass_in_ball(mu_->position(q.center_atom), r100) / std::pow(r100, n);
    };
    double base = std::pow(params_.c0 * params_.a0, n + 1);
    for (const auto& q : cubes_) {
        // climb: R = parent, grandparent, ... while strict intermediates are
        // non-doubling
        int rid = q.parent;
        bool intermediates_ok = true;
        int hops = 1;
        while (rid >= 0 && intermediates_ok) {
            const Cube& rc = cubes_[static_cast<size_t>(rid)];
            double lhs = theta100(q);
            double rhs = base * std::pow(static_cast<double>(params_.a0), -9.0 * d * (hops - 1)) *
                         theta100(rc);
            if (rhs > 0) {
                rep.chains += 1;
                rep.max_ratio = std::max(rep.max_ratio, lhs / rhs);
            }
            // extend: the next R adds the current R as an intermediate
            if (!rc.doubling) {
                rid = rc.parent;
                ++hops;
            } else {
                intermediates_ok = false;
            }
        }
    }
    return rep;
}

void Lattice::dump_jsonl(std::ostream& os) const {
    for (const auto& q : cubes_) {
        os << "{\"id\":" << q.id << ",\"level\":" << q.level << ",\"center\":[";
        const double* p = mu_->position(q.center_atom);
        for (int i = 0; i < mu_->dim(); ++i) {
            if (i) os << ',';
            os << fmt_double(p[i]);
        }
        os << "],\"r\":" << fmt_double(q.r) << ",\"ell\":" << fmt_double(q.ell)
           << ",\"parent\":" << q.parent << ",\"mass\":" << fmt_double(q.mass)
           << ",\"mass2b\":" << fmt_double(q.mass_2bq) << ",\"theta_k\":" << q.theta_k
           << ",\"db\":" << (q.doubling ? 1 : 0) << ",\"pdb\":" << (q.p_doubling ? 1 : 0) << "}\n";
    }
}

uint64_t Lattice::hash() const {
    std::ostringstream ss;
    dump_jsonl(ss);
    Fnv1a h;
    h.add(ss.str());
    return h.h;
}

bool is_doubling(const Lattice& lat, int cube_id) { return lat.cube(cube_id).doubling; }
bool is_p_doubling(const Lattice& lat, int cube_id) { return lat.cube(cube_id).p_doubling; }
double p_coeff(const Lattice& lat, int cube_id) { return lat.cube(cube_id).p_coeff; }
double theta_disc(const Lattice& lat, int cube_id) { return lat.cube(cube_id).theta; }

}  // namespace rlab
