#include "rlab/corona.hpp"

#include <cmath>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace rlab {

// ---------------------------------------------------------------------------
// StoppingConfig
// ---------------------------------------------------------------------------

StoppingConfig StoppingConfig::desk(int n, int a0) {
    StoppingConfig c;
    c.profile = Profile::desk;
    c.n = n;
    c.a0 = a0;
    c.k0 = 1;
    c.m0 = std::pow(a0, n);  // A0^{k0 n}
    c.k_lambda_exact = (8.0 * n - 1) / (8.0 * n - 2);
    c.k_lambda = 1;
    c.k_lambda_rounded = true;
    c.lambda_cap = std::pow(a0, n);  // matches the k_lambda = 1 layer
    c.lambda0 = 1.0 / (a0 * a0);
    c.delta0 = 1.0 / (c.lambda_cap * c.lambda_cap);
    c.b_const = 2.0;
    c.eps_z = 1e-3;
    c.p0 = 2.0 - 1.0 / (18.0 * n);
    c.eps_n = 1.0 / (32.0 * (8.0 * n - 1) * (8.0 * n - 1));
    return c;
}

StoppingConfig StoppingConfig::paper(int n, int a0, int k0, double c0_small, double c_prime) {
    StoppingConfig c;
    c.profile = Profile::paper;
    c.n = n;
    c.a0 = a0;
    c.k0 = k0;
    c.c0_small = c0_small;
    c.c_prime = c_prime;
    c.m0 = std::pow(a0, static_cast<double>(k0) * n);
    c.k_lambda_exact = (8.0 * n - 1) / (8.0 * n - 2) * k0;
    c.k_lambda = static_cast<int>(std::ceil(c.k_lambda_exact - 1e-12));
    c.k_lambda_rounded = k0 % (8 * n - 2) != 0;
    // Lambda = M0^{(8n-1)/(8n-2)} exactly (real exponent, not the rounded layer)
    c.lambda_cap = std::pow(c.m0, (8.0 * n - 1) / (8.0 * n - 2));
    c.lambda0 = c0_small / std::pow(c.lambda_cap, 4);
    c.delta0 = std::min(c_prime * std::pow(c.lambda_cap, 1.0 - 4.0 * n),
                        std::pow(c.lambda_cap, -static_cast<double>((n + 2) * (n + 2))));
    c.b_const = std::pow(c.lambda_cap, 1.0 / (100.0 * n));
    c.eps_z = std::pow(c.lambda_cap, -72.0 * n);
    c.p0 = 2.0 - 1.0 / (18.0 * n);
    c.eps_n = 1.0 / (32.0 * (8.0 * n - 1) * (8.0 * n - 1));
    return c;
}

// ---------------------------------------------------------------------------
// CoronaContext
// ---------------------------------------------------------------------------

CoronaContext::CoronaContext(const Lattice& lat, StoppingConfig cfg) : lat_(&lat), cfg_(cfg) {
    const int count = lat.cube_count();
    in_db_.assign(static_cast<size_t>(count), 0);
    m_of_.assign(static_cast<size_t>(count), 0.0);
    einf9_.assign(static_cast<size_t>(count), 0.0);
    mass9_.assign(static_cast<size_t>(count), 0.0);

    for (int cid = 0; cid < count; ++cid) {
        mass9_[static_cast<size_t>(cid)] = lat.region_mass(lat.lambda_region(cid, 9.0));
        if (!lat.cube(cid).p_doubling) continue;
        einf9_[static_cast<size_t>(cid)] = energy_Einf(lat, cid, 9.0).total;
        if (dominated_from_below(cid, cfg_.m0)) {
            in_db_[static_cast<size_t>(cid)] = 1;
            db_.push_back(cid);
            // dyadic scan for M(Q): Q in DB(M(Q)) \ DB(2 M(Q))
            double m = cfg_.m0;
            while (dominated_from_below(cid, 2 * m)) m *= 2;
            m_of_[static_cast<size_t>(cid)] = m;
        }
    }
}

bool CoronaContext::dominated_from_below(int cube_id, double m) const {
    const Cube& q = lat_->cube(cube_id);
    double thr = m * m * q.theta * q.theta * mass9_[static_cast<size_t>(cube_id)];
    return einf9_[static_cast<size_t>(cube_id)] > thr;
}

int k_qm(const CoronaContext& ctx, int cube_id, double m) {
    const Lattice& lat = ctx.lattice();
    const Cube& q = lat.cube(cube_id);
    if (!q.p_doubling || !ctx.dominated_from_below(cube_id, m))
        throw std::runtime_error("k_qm: cube is not dominated at this level");
    double thr = m * m * q.theta * q.theta * ctx.mass9(cube_id);
    for (int k = 1; k <= lat.levels(); ++k) {
        if (energy_layer(lat, cube_id, k, 9.0) > thr) return k;
    }
    throw std::runtime_error("k_qm: no layer exceeds the threshold (inconsistent membership)");
}

// ---------------------------------------------------------------------------
// G/B families
// ---------------------------------------------------------------------------

GFamily g_family(const CoronaContext& ctx, int cube_id, double m) {
    const Lattice& lat = ctx.lattice();
    const StoppingConfig& cfg = ctx.config();
    GFamily out;
    out.q = cube_id;
    out.m = m;
    out.k_qm = k_qm(ctx, cube_id, m);
    out.k_s = out.k_qm - cfg.k_lambda;
    if (out.k_s < 0) {
        out.k_s = 0;
        out.k_clamped = true;
    }

    const double lam = cfg.lambda_cap;
    std::vector<int> coarse = lat.hd_in_region(cube_id, out.k_s, 9.0);
    std::vector<int> fine = lat.hd_in_region(cube_id, out.k_qm, 9.0);

    for (int s : coarse) {
        const Cube& sc = lat.cube(s);
        std::vector<int> inside;
        for (int p : fine)
            if (lat.contains(s, p)) inside.push_back(p);
        // G test: mu(S) <= 2 Lambda^2 sum (l(P)/l(S))^(1/2) mu(P)
        Kahan rhs;
        for (int p : inside) {
            const Cube& pc = lat.cube(p);
            rhs.add(std::sqrt(pc.ell / sc.ell) * pc.mass);
        }
        bool good = sc.mass <= 2 * lam * lam * rhs.value();
        (good ? out.g : out.b).push_back(s);
        if (!good) continue;

        // I_S = big_{lambda0}(S)
        std::vector<int> big;
        bool theta_exact = true;
        Kahan sig;
        for (int p : inside) {
            const Cube& pc = lat.cube(p);
            if (pc.ell >= cfg.lambda0 * sc.ell) {
                big.push_back(p);
                sig.add(pc.theta * pc.theta * pc.mass);
                if (std::abs(pc.theta - lam * sc.theta) > 1e-9 * lam * sc.theta)
                    theta_exact = false;
            }
        }
        out.big_of_s[s] = big;
        out.cond_theta_exact[s] = theta_exact ? 1 : 0;
        out.sigma_is[s] = sig.value();
    }
    return out;
}

std::vector<int> gdf_family(const CoronaContext& ctx) {
    std::set<int> gdf;
    for (int q : ctx.db_cubes()) {
        GFamily gf = g_family(ctx, q, ctx.m_of(q));
        for (int s : gf.g)
            if (ctx.lattice().cube(s).p_doubling) gdf.insert(s);
    }
    return std::vector<int>(gdf.begin(), gdf.end());
}

// ---------------------------------------------------------------------------
// Stopping families
// ---------------------------------------------------------------------------

namespace {

// maximal cubes with level > floor_level satisfying `qual` (no qualifying
// strict ancestor above floor_level)
template <class Pred>
std::vector<int> maximal_family(const Lattice& lat, int floor_level, Pred qual) {
    std::vector<char> covered(static_cast<size_t>(lat.cube_count()), 0);
    std::vector<int> out;
    for (int lvl = floor_level + 1; lvl < lat.levels(); ++lvl) {
        for (int cid : lat.level_cubes(lvl)) {
            const Cube& c = lat.cube(cid);
            bool cov = false;
            if (c.parent >= 0 && lat.cube(c.parent).level > floor_level)
                cov = covered[static_cast<size_t>(c.parent)] || qual(c.parent);
            covered[static_cast<size_t>(cid)] = cov;
            if (!cov && qual(cid)) out.push_back(cid);
        }
    }
    return out;
}

std::vector<int> maximal_of_set(const Lattice& lat, const std::set<int>& s) {
    std::vector<int> out;
    for (int cid : s) {
        bool nested = false;
        int a = lat.cube(cid).parent;
        while (a >= 0) {
            if (s.count(a)) {
                nested = true;
                break;
            }
            a = lat.cube(a).parent;
        }
        if (!nested) out.push_back(cid);
    }
    return out;
}

}  // namespace

StoppingFamilies stopping_families(const CoronaContext& ctx, int root) {
    const Lattice& lat = ctx.lattice();
    const StoppingConfig& cfg = ctx.config();
    const Cube& r = lat.cube(root);
    StoppingFamilies out;

    out.hd = lat.hd_family(root, cfg.k_lambda);
    out.ld = maximal_family(lat, r.level, [&](int cid) {
        return lat.cube(cid).theta <= cfg.delta0 * r.theta;
    });

    std::set<int> hd_set(out.hd.begin(), out.hd.end());
    std::set<int> ld_set(out.ld.begin(), out.ld.end());

    // NDB: small cubes with a DB cube of the same generation inside 20Q
    for (int lvl = r.level + 1; lvl < lat.levels(); ++lvl) {
        if (lat.level_cubes(lvl).empty()) continue;
        double ell_lvl = lat.cube(lat.level_cubes(lvl).front()).ell;
        if (!(ell_lvl < cfg.lambda0 * r.ell)) continue;
        for (int cid : lat.level_cubes(lvl)) {
            if (hd_set.count(cid) || ld_set.count(cid)) continue;
            const Cube& c = lat.cube(cid);
            const double* xc = lat.measure().position(c.center_atom);
            bool near_db = false;
            for (int dbc : ctx.db_cubes()) {
                if (lat.cube(dbc).level != lvl) continue;
                if (lat.cube_within(xc, dbc, 20.0 * c.ell)) {
                    near_db = true;
                    break;
                }
            }
            if (near_db) out.ndb.push_back(cid);
        }
    }

    std::set<int> all(out.hd.begin(), out.hd.end());
    all.insert(out.ld.begin(), out.ld.end());
    all.insert(out.ndb.begin(), out.ndb.end());
    out.bad = maximal_of_set(lat, all);

    for (int cid : out.bad)
        if (lat.contains(root, cid)) out.stop.push_back(cid);
    return out;
}

EnlargedRegion enlarged_region(const CoronaContext& ctx, int root, int j) {
    if (j < 0) throw std::runtime_error("enlarged_region: j >= 0");
    const Lattice& lat = ctx.lattice();
    const AtomicMeasure& mu = lat.measure();
    const Cube& r = lat.cube(root);
    EnlargedRegion out;
    out.j = j;
    out.cubes.push_back(root);
    out.atom_mask.assign(static_cast<size_t>(mu.size()), 0);
    for (int a : r.atoms) out.atom_mask[static_cast<size_t>(a)] = 1;

    if (r.level + 1 < lat.levels()) {
        const double* xr = mu.position(r.center_atom);
        for (int cid : lat.level_cubes(r.level + 1)) {
            const Cube& q = lat.cube(cid);
            double thresh = 0.5 * r.ell + 2.0 * j * q.ell;
            if (lat.dist_point_to_cube_lb(xr, cid) >= thresh) continue;
            if (lat.dist_point_to_cube(xr, cid) < thresh) {
                out.cubes.push_back(cid);
                for (int a : q.atoms) out.atom_mask[static_cast<size_t>(a)] = 1;
            }
        }
    }
    for (int a = 0; a < mu.size(); ++a)
        if (out.atom_mask[static_cast<size_t>(a)]) out.atoms.push_back(a);
    out.ball.center = mu.position_vec(r.center_atom);
    out.ball.radius = (0.5 + 2.0 * j / ctx.config().a0) * r.ell;
    return out;
}

namespace {

// sigma(HD(R) n Stop(e_j(R)) \ NDB(R)) for the h-selection scan
double sigma_hd_stop_ej(const CoronaContext& ctx, int root, const StoppingFamilies& fam, int j) {
    const Lattice& lat = ctx.lattice();
    EnlargedRegion ej = enlarged_region(ctx, root, j);
    std::set<int> hd(fam.hd.begin(), fam.hd.end());
    std::set<int> ndb(fam.ndb.begin(), fam.ndb.end());
    std::vector<int> sel;
    for (int cid : fam.bad) {
        if (!hd.count(cid) || ndb.count(cid)) continue;
        const Cube& c = lat.cube(cid);
        if (c.ell > lat.cube(root).ell) continue;
        bool inside = true;
        for (int a : c.atoms)
            if (!ej.atom_mask[static_cast<size_t>(a)]) {
                inside = false;
                break;
            }
        if (inside) sel.push_back(cid);
    }
    return ctx.sigma_set(sel);
}

}  // namespace

HSelection select_h(const CoronaContext& ctx, int root) {
    const StoppingFamilies fam = stopping_families(ctx, root);
    const double b14 = std::pow(ctx.config().b_const, 0.25);
    const int j_hi = std::max(10, ctx.config().a0 / 4);
    HSelection out;
    double best_ratio = std::numeric_limits<double>::infinity();
    int best_j = 10;
    for (int j = 10; j <= j_hi; ++j) {
        double sj = sigma_hd_stop_ej(ctx, root, fam, j);
        double sj10 = sigma_hd_stop_ej(ctx, root, fam, j - 10);
        double ratio = sj10 > 0 ? sj / sj10 : (sj > 0 ? std::numeric_limits<double>::infinity() : 0.0);
        if (ratio <= b14) {
            out.j = j;
            out.h = j - 10;
            out.ratio = ratio;
            out.lemma_miss = false;
            return out;
        }
        if (ratio < best_ratio) {
            best_ratio = ratio;
            best_j = j;
        }
    }
    out.j = best_j;
    out.h = best_j - 10;
    out.ratio = best_ratio;
    out.lemma_miss = true;
    return out;
}

bool is_mdw(const CoronaContext& ctx, int root) {
    const Lattice& lat = ctx.lattice();
    if (!lat.cube(root).p_doubling) return false;
    StoppingFamilies fam = stopping_families(ctx, root);
    std::set<int> hd(fam.hd.begin(), fam.hd.end());
    std::set<int> ndb(fam.ndb.begin(), fam.ndb.end());
    std::vector<int> sel;
    for (int cid : fam.stop)
        if (hd.count(cid) && !ndb.count(cid)) sel.push_back(cid);
    double lhs = ctx.sigma_set(sel);
    return lhs >= ctx.sigma_one(root) / ctx.config().b_const;
}

// ---------------------------------------------------------------------------
// Tree construction
// ---------------------------------------------------------------------------

namespace {

// cubes contained (as atom sets) in the region and not strictly inside a
// blocker; same-level non-root cubes included only when asked
std::vector<int> tree_cubes(const Lattice& lat, int root, const EnlargedRegion& region,
                            const std::set<int>& blockers, bool include_same_level) {
    std::vector<int> out;
    const int rl = lat.cube(root).level;
    std::vector<char> blocked(static_cast<size_t>(lat.cube_count()), 0);
    for (int lvl = rl; lvl < lat.levels(); ++lvl) {
        for (int cid : lat.level_cubes(lvl)) {
            const Cube& c = lat.cube(cid);
            bool par_blocked = false;
            if (c.parent >= 0 && lat.cube(c.parent).level >= rl)
                par_blocked = blocked[static_cast<size_t>(c.parent)] ||
                              blockers.count(c.parent) > 0;
            blocked[static_cast<size_t>(cid)] = par_blocked;
            if (par_blocked) continue;
            if (lvl == rl && !include_same_level && cid != root) continue;
            bool inside = true;
            for (int a : c.atoms)
                if (!region.atom_mask[static_cast<size_t>(a)]) {
                    inside = false;
                    break;
                }
            if (inside) out.push_back(cid);
        }
    }
    return out;
}

// maximal P-doubling cubes inside `top`, optionally restricted to a mask
void collect_max_p_doubling(const Lattice& lat, int top, const std::vector<char>* restrict_mask,
                            std::vector<int>& out) {
    std::vector<int> stack = {top};
    while (!stack.empty()) {
        int cid = stack.back();
        stack.pop_back();
        const Cube& c = lat.cube(cid);
        bool eligible = c.p_doubling &&
                        (!restrict_mask || (*restrict_mask)[static_cast<size_t>(cid)]);
        if (eligible) {
            out.push_back(cid);
            continue;
        }
        for (int ch : c.children) stack.push_back(ch);
    }
}

}  // namespace

CoronaTree build_tree(const CoronaContext& ctx, int root, bool force, TreeStage stage) {
    const Lattice& lat = ctx.lattice();
    const AtomicMeasure& mu = lat.measure();
    const StoppingConfig& cfg = ctx.config();
    CoronaTree t;
    t.root = root;
    t.mdw = is_mdw(ctx, root);
    t.forced = !t.mdw && force;
    if (!t.mdw && !force) return t;

    t.fam = stopping_families(ctx, root);
    t.h_sel = select_h(ctx, root);
    t.e = enlarged_region(ctx, root, t.h_sel.h);
    t.e1 = enlarged_region(ctx, root, t.h_sel.h + 1);
    t.e2 = enlarged_region(ctx, root, t.h_sel.h + 2);

    std::set<int> hd_set(t.fam.hd.begin(), t.fam.hd.end());
    std::set<int> ndb_set(t.fam.ndb.begin(), t.fam.ndb.end());
    auto stop_in_region = [&](const EnlargedRegion& reg) {
        std::vector<int> out;
        for (int cid : t.fam.bad) {
            const Cube& c = lat.cube(cid);
            if (c.ell > lat.cube(root).ell) continue;
            bool inside = true;
            for (int a : c.atoms)
                if (!reg.atom_mask[static_cast<size_t>(a)]) {
                    inside = false;
                    break;
                }
            if (inside) out.push_back(cid);
        }
        return out;
    };
    t.stop_e1 = stop_in_region(t.e1);
    std::vector<int> stop_e = stop_in_region(t.e);

    auto hd1_of = [&](const std::vector<int>& stop_set) {
        std::vector<int> out;
        for (int cid : stop_set)
            if (hd_set.count(cid) && !ndb_set.count(cid)) out.push_back(cid);
        return out;
    };
    t.hd1_r = hd1_of(t.fam.stop);
    t.hd1_e = hd1_of(stop_e);
    t.hd1_e1 = hd1_of(t.stop_e1);

    // HD_2 and Stop_2
    std::set<int> hd1_e1_set(t.hd1_e1.begin(), t.hd1_e1.end());
    std::set<int> stop2_set;
    for (int cid : t.stop_e1)
        if (!hd1_e1_set.count(cid)) stop2_set.insert(cid);
    for (int q : t.hd1_e1) {
        StoppingFamilies sub = stopping_families(ctx, q);
        std::set<int> sub_hd(sub.hd.begin(), sub.hd.end());
        std::set<int> sub_ndb(sub.ndb.begin(), sub.ndb.end());
        for (int cid : sub.stop) {
            stop2_set.insert(cid);
            if (sub_hd.count(cid) && !sub_ndb.count(cid)) t.hd2_e1.push_back(cid);
        }
        t.hd1_sub.emplace(q, std::move(sub));
    }
    t.stop2.assign(stop2_set.begin(), stop2_set.end());

    // sigmas and the tractability flag; the families stage stops here
    t.sigma_r = ctx.sigma_one(root);
    t.sigma_hd1_r = ctx.sigma_set(t.hd1_r);
    t.sigma_hd1_e = ctx.sigma_set(t.hd1_e);
    t.sigma_hd1_e1 = ctx.sigma_set(t.hd1_e1);
    t.sigma_hd2 = ctx.sigma_set(t.hd2_e1);
    t.tractable = t.sigma_hd2 <= cfg.b_const * t.sigma_hd1_e;
    if (stage == TreeStage::families) return t;

    // T_Stop and Neg
    t.t_stop = tree_cubes(lat, root, t.e1, stop2_set, false);
    std::vector<char> in_t_stop(static_cast<size_t>(lat.cube_count()), 0);
    for (int cid : t.t_stop) in_t_stop[static_cast<size_t>(cid)] = 1;
    for (int cid : t.t_stop) {
        bool has_pd = false;
        for (int a = cid; a >= 0 && in_t_stop[static_cast<size_t>(a)]; a = lat.cube(a).parent) {
            if (lat.cube(a).p_doubling) {
                has_pd = true;
                break;
            }
        }
        if (!has_pd) t.neg.push_back(cid);
    }
    std::set<int> neg_set(t.neg.begin(), t.neg.end());

    // End: negligible Stop_2 members verbatim, plus the maximal P-doubling
    // cubes inside the other Stop_2 members
    std::set<int> end_set;
    for (int s : t.stop2) {
        if (neg_set.count(s)) {
            end_set.insert(s);
        } else {
            std::vector<int> maxpd;
            collect_max_p_doubling(lat, s, nullptr, maxpd);
            end_set.insert(maxpd.begin(), maxpd.end());
        }
    }
    t.end.assign(end_set.begin(), end_set.end());

    t.t_tree = tree_cubes(lat, root, t.e1, end_set, true);

    // Z = e'(R) \ union(End)
    std::vector<char> covered(static_cast<size_t>(mu.size()), 0);
    for (int e : t.end)
        for (int a : lat.cube(e).atoms) covered[static_cast<size_t>(a)] = 1;
    for (int a : t.e1.atoms)
        if (!covered[static_cast<size_t>(a)]) t.z_atoms.push_back(a);

    t.typical = typical_test(ctx, t).typical;
    if (stage == TreeStage::trees) return t;

    // ---- regularized cubes ----
    double ell0 = cfg.ell0 > 0 ? cfg.ell0 : 2.0 * mu.r_atom();
    {
        // half-mass condition on HD_1(e(R)); halve ell0 until it holds
        Kahan full;
        for (int q : t.hd1_e) full.add(lat.cube(q).mass);
        for (int iter = 0; iter < 80; ++iter) {
            Kahan part;
            for (int q : t.hd1_e)
                if (lat.cube(q).ell >= ell0) part.add(lat.cube(q).mass);
            if (part.value() >= 0.5 * full.value()) break;
            ell0 /= 2;
            if (ell0 < mu.r_atom()) {
                ell0 = mu.r_atom();
                t.ell0_clamped = true;
                break;
            }
        }
    }
    t.ell0_used = ell0;

    // d_R over atoms, from the tree T(e'(R))
    std::vector<double> d_r(static_cast<size_t>(mu.size()),
                            std::numeric_limits<double>::infinity());
    for (int q : t.t_tree) {
        const Cube& c = lat.cube(q);
        for (int a = 0; a < mu.size(); ++a) {
            double d = lat.dist_point_to_cube(mu.position(a), q) + c.ell;
            d_r[static_cast<size_t>(a)] = std::min(d_r[static_cast<size_t>(a)], d);
        }
    }
    // per-cube min of d_{R, ell0} (max(l0, .) commutes with the min)
    std::vector<double> cube_min_d(static_cast<size_t>(lat.cube_count()),
                                   std::numeric_limits<double>::infinity());
    for (int cid = 0; cid < lat.cube_count(); ++cid) {
        double m = std::numeric_limits<double>::infinity();
        for (int a : lat.cube(cid).atoms) m = std::min(m, d_r[static_cast<size_t>(a)]);
        cube_min_d[static_cast<size_t>(cid)] = std::max(ell0, m);
    }
    // largest admissible cube per atom of e'(R); leaf fallback is flagged
    std::set<int> reg_set;
    for (int a : t.e1.atoms) {
        int pick = -1;
        for (int c = lat.ancestor_at_level(a, 0); c >= 0;) {
            const Cube& cc = lat.cube(c);
            if (cc.ell <= cube_min_d[static_cast<size_t>(c)] / 60.0) {
                pick = c;
                break;
            }
            int nxt = -1;
            for (int ch : cc.children)
                if (lat.contains(ch, lat.leaf_of_atom(a))) {
                    nxt = ch;
                    break;
                }
            c = nxt;
        }
        if (pick < 0) {
            pick = lat.leaf_of_atom(a);
            t.ell0_clamped = true;
        }
        reg_set.insert(pick);
    }
    t.reg.assign(reg_set.begin(), reg_set.end());

    // T_Reg, M_Neg, End~, T~
    t.t_reg = tree_cubes(lat, root, t.e1, reg_set, false);
    std::vector<char> in_t_reg(static_cast<size_t>(lat.cube_count()), 0);
    for (int cid : t.t_reg) in_t_reg[static_cast<size_t>(cid)] = 1;
    for (int e : t.end) {
        if (!neg_set.count(e)) continue;
        std::vector<int> maxpd;
        collect_max_p_doubling(lat, e, &in_t_reg, maxpd);
        t.m_neg.insert(t.m_neg.end(), maxpd.begin(), maxpd.end());
    }
    std::sort(t.m_neg.begin(), t.m_neg.end());
    t.m_neg.erase(std::unique(t.m_neg.begin(), t.m_neg.end()), t.m_neg.end());

    std::set<int> end_tilde_set;
    for (int e : t.end)
        if (!neg_set.count(e)) end_tilde_set.insert(e);
    end_tilde_set.insert(t.m_neg.begin(), t.m_neg.end());
    t.end_tilde.assign(end_tilde_set.begin(), end_tilde_set.end());

    t.t_tilde = tree_cubes(lat, root, t.e1, end_tilde_set, false);

    std::vector<char> covered2(static_cast<size_t>(mu.size()), 0);
    for (int e : t.end_tilde)
        for (int a : lat.cube(e).atoms) covered2[static_cast<size_t>(a)] = 1;
    for (int a : t.e1.atoms)
        if (!covered2[static_cast<size_t>(a)]) t.z_tilde_atoms.push_back(a);
    return t;
}

bool is_tractable(const CoronaTree& tree) { return tree.tractable; }

double tree_distance(const CoronaContext& ctx, const CoronaTree& tree, const double* x) {
    const Lattice& lat = ctx.lattice();
    double best = std::numeric_limits<double>::infinity();
    for (int q : tree.t_tree) {
        const Cube& c = lat.cube(q);
        if (lat.dist_point_to_cube_lb(x, q) + c.ell >= best) continue;
        best = std::min(best, lat.dist_point_to_cube(x, q) + c.ell);
    }
    return best;
}

TypicalResult typical_test(const CoronaContext& ctx, const CoronaTree& tree) {
    const Lattice& lat = ctx.lattice();
    TypicalResult out;
    out.rhs = std::pow(ctx.config().lambda_cap, -1.0 / (3.0 * ctx.config().n)) * tree.sigma_hd1_e;

    std::map<int, std::vector<int>> tree_by_level;
    for (int cid : tree.t_tree) tree_by_level[lat.cube(cid).level].push_back(cid);

    std::map<int, std::vector<int>> region20;  // cache of 20P atom lists
    auto atoms20 = [&](int cid) -> const std::vector<int>& {
        auto it = region20.find(cid);
        if (it != region20.end()) return it->second;
        auto reg = lat.lambda_region(cid, 20.0);
        return region20.emplace(cid, lat.region_atoms(reg)).first->second;
    };

    Kahan lhs;
    for (int p : ctx.db_cubes()) {
        const Cube& pc = lat.cube(p);
        const double* xp = lat.measure().position(pc.center_atom);
        bool related = false;
        for (int dl = -2; dl <= 2 && !related; ++dl) {
            auto it = tree_by_level.find(pc.level + dl);
            if (it == tree_by_level.end()) continue;
            for (int pp : it->second) {
                const Cube& ppc = lat.cube(pp);
                // ball prefilter before the exact region intersection
                double dctr =
                    dist(xp, lat.measure().position(ppc.center_atom), lat.measure().dim());
                if (dctr > 21.5 * (pc.ell + ppc.ell)) continue;
                const auto& a1 = atoms20(p);
                const auto& a2 = atoms20(pp);
                auto i1 = a1.begin();
                auto i2 = a2.begin();
                while (i1 != a1.end() && i2 != a2.end()) {
                    if (*i1 < *i2)
                        ++i1;
                    else if (*i2 < *i1)
                        ++i2;
                    else {
                        related = true;
                        break;
                    }
                }
                if (related) break;
            }
        }
        if (related) {
            out.near_db.push_back(p);
            lhs.add(ctx.einf9(p));
        }
    }
    out.lhs = lhs.value();
    out.typical = out.lhs <= out.rhs;
    return out;
}

// ---------------------------------------------------------------------------
// GH selection and the generation iteration
// ---------------------------------------------------------------------------

GhResult gh_family(const CoronaContext& ctx, const CoronaTree& tree) {
    const double b = ctx.config().b_const;
    GhResult out;

    struct Cand {
        int q;
        double score;  // sigma(HD_1(e(Q)))
        Ball ball;     // B(e''(Q))
    };
    std::vector<Cand> cands;
    for (int q : tree.hd1_e1) {
        if (!is_mdw(ctx, q)) continue;
        CoronaTree tq = build_tree(ctx, q, false, TreeStage::families);
        double s_hd1_q = tq.sigma_hd1_r;
        if (!(s_hd1_q >= std::sqrt(b) * ctx.sigma_one(q))) continue;
        cands.push_back({q, tq.sigma_hd1_e, tq.e2.ball});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b2) {
        if (a.score != b2.score) return a.score > b2.score;
        return a.q < b2.q;
    });

    std::vector<Ball> accepted;
    Kahan score_sum;
    for (const Cand& c : cands) {
        bool ok = true;
        for (const Ball& b2 : accepted) {
            if (dist(c.ball.center, b2.center) < c.ball.radius + b2.radius) {
                ok = false;
                break;
            }
        }
        if (ok) {
            accepted.push_back(c.ball);
            out.selected.push_back(c.q);
            score_sum.add(c.score);
        }
    }
    double rhs = std::pow(b, 0.25) * score_sum.value();
    out.prop_c_constant = rhs > 0 ? tree.sigma_hd2 / rhs : (tree.sigma_hd2 > 0 ? -1 : 0);
    out.prop_c_holds = out.prop_c_constant >= 0 && out.prop_c_constant <= 1.0;
    return out;
}

GenIteration gen_iteration(const CoronaContext& ctx, int root, int depth_cap) {
    const Lattice& lat = ctx.lattice();
    GenIteration out;
    out.gen.push_back({root});
    std::map<int, CoronaTree> trees;
    auto tree_of = [&](int q) -> const CoronaTree& {
        auto it = trees.find(q);
        if (it != trees.end()) return it->second;
        return trees.emplace(q, build_tree(ctx, q, q == root, TreeStage::families)).first->second;
    };

    for (int j = 0;; ++j) {
        std::vector<int> trc_j, next;
        for (int q : out.gen[static_cast<size_t>(j)]) {
            const CoronaTree& tq = tree_of(q);
            if (tq.tractable) {
                trc_j.push_back(q);
            } else {
                GhResult gh = gh_family(ctx, tq);
                next.insert(next.end(), gh.selected.begin(), gh.selected.end());
            }
        }
        out.trc.push_back(trc_j);
        if (next.empty()) break;
        if (j + 1 >= depth_cap) {
            out.depth_capped = true;
            break;
        }
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        out.gen.push_back(next);
    }

    // containment: every Gen u Trc cube inside B(e''(R))
    const CoronaTree& troot = tree_of(root);
    out.containment_ok = true;
    for (const auto& layer : out.gen) {
        for (int q : layer) {
            for (int a : lat.cube(q).atoms) {
                if (dist(lat.measure().position(a), troot.e2.ball.center.v, lat.measure().dim()) >
                    troot.e2.ball.radius + 1e-12) {
                    out.containment_ok = false;
                }
            }
        }
    }

    // layered decomposition slack: sigma(HD1(e(R))) vs
    // sum_j B^{-j/2} sum_{Q in Trc_j} sigma(HD1(e(Q)))
    double lhs = troot.sigma_hd1_e;
    Kahan rhs;
    for (size_t j = 0; j < out.trc.size(); ++j) {
        for (int q : out.trc[j])
            rhs.add(std::pow(ctx.config().b_const, -0.5 * static_cast<double>(j)) *
                    tree_of(q).sigma_hd1_e);
    }
    out.decomposition_slack = lhs > 0 ? rhs.value() / lhs : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Layers build_layers(const CoronaContext& ctx) {
    const Lattice& lat = ctx.lattice();
    Layers out;
    std::vector<int> gdf = gdf_family(ctx);

    // F_j by density bucket, then peel into maximal layers F_j^h
    std::map<int, std::vector<int>> by_bucket;
    for (int s : gdf) by_bucket[lat.cube(s).theta_k].push_back(s);

    std::map<int, CoronaTree> trees;
    auto tree_of = [&](int q) -> const CoronaTree& {
        auto it = trees.find(q);
        if (it != trees.end()) return it->second;
        return trees.emplace(q, build_tree(ctx, q, true, TreeStage::families)).first->second;
    };
    auto ball4 = [&](int q) {
        const CoronaTree& tq = tree_of(q);
        Ball b;
        b.center = lat.measure().position_vec(lat.cube(q).center_atom);
        b.radius = (0.5 + 2.0 * (tq.h_sel.h + 4) / ctx.config().a0) * lat.cube(q).ell;
        return b;
    };

    for (auto& [j, cubes] : by_bucket) {
        std::set<int> remaining(cubes.begin(), cubes.end());
        int h = 1;
        while (!remaining.empty()) {
            std::vector<int> layer = maximal_of_set(lat, remaining);
            std::sort(layer.begin(), layer.end());
            out.f[{j, h}] = layer;
            for (int c : layer) remaining.erase(c);
            ++h;
            if (h > 64) break;
        }
    }

    for (auto& [jh, layer] : out.f) {
        // (i) keep cubes whose ball B(e^4(Q)) is not contained in another
        // candidate's ball
        std::vector<int> kept;
        for (int q : layer) {
            Ball bq = ball4(q);
            bool contained = false;
            for (int q2 : layer) {
                if (q2 == q) continue;
                Ball b2 = ball4(q2);
                if (dist(bq.center, b2.center) + bq.radius <= b2.radius + 1e-15) {
                    contained = true;
                    break;
                }
            }
            if (!contained) kept.push_back(q);
        }
        // (ii) greedy split into disjoint subfamilies (by decreasing radius)
        std::sort(kept.begin(), kept.end(), [&](int a, int b) {
            double ra = ball4(a).radius, rb = ball4(b).radius;
            if (ra != rb) return ra > rb;
            return a < b;
        });
        std::vector<std::vector<int>> subs;
        for (int q : kept) {
            Ball bq = ball4(q);
            bool placed = false;
            for (auto& sub : subs) {
                bool disjoint = true;
                for (int q2 : sub) {
                    Ball b2 = ball4(q2);
                    if (dist(bq.center, b2.center) < bq.radius + b2.radius) {
                        disjoint = false;
                        break;
                    }
                }
                if (disjoint) {
                    sub.push_back(q);
                    placed = true;
                    break;
                }
            }
            if (!placed) subs.push_back({q});
        }
        out.m0_emp = std::max(out.m0_emp, static_cast<int>(subs.size()));
        // choose the subfamily maximizing sum sigma(HD1(e(Q)))
        double best = -1;
        std::vector<int> best_sub;
        for (auto& sub : subs) {
            Kahan s;
            for (int q : sub) s.add(tree_of(q).sigma_hd1_e);
            if (s.value() > best) {
                best = s.value();
                best_sub = sub;
            }
        }
        std::sort(best_sub.begin(), best_sub.end());
        out.l[jh] = best_sub;

        // (iii) report
        Kahan lhs;
        for (int q : layer) lhs.add(tree_of(q).sigma_hd1_r);
        double rhs = static_cast<double>(std::max(out.m0_emp, 1)) *
                     std::pow(ctx.config().b_const, 0.25) * (best > 0 ? best : 0);
        if (rhs > 0)
            out.prop_iii_constant = std::max(out.prop_iii_constant, lhs.value() / rhs);

        // (i)/(ii) verification on the selected family
        for (int q : best_sub) {
            Ball bq = ball4(q);
            for (int q2 : layer) {
                if (q2 == q) continue;
                Ball b2 = ball4(q2);
                if (dist(bq.center, b2.center) + bq.radius <= b2.radius + 1e-15)
                    out.prop_i_ok = false;
            }
            for (int q2 : best_sub) {
                if (q2 >= q) continue;
                Ball b2 = ball4(q2);
                if (dist(bq.center, b2.center) < bq.radius + b2.radius) out.prop_ii_ok = false;
            }
        }
    }
    return out;
}

OverlapReport overlap_report(const CoronaContext& ctx, const Layers& layers, int depth_cap) {
    OverlapReport out;
    out.bound = ctx.config().cc2 * std::pow(std::log(ctx.config().lambda_cap), 2.0);

    // counted exactly: for each (P, k), the number of selected roots R with
    // some Q in Trc_k(R) whose tree contains P
    std::map<int, std::map<int, int>> count;  // k -> cube -> count
    for (auto& [jh, sel] : layers.l) {
        (void)jh;
        for (int r : sel) {
            GenIteration gi = gen_iteration(ctx, r, depth_cap);
            for (size_t k = 0; k < gi.trc.size(); ++k) {
                std::set<int> touched;
                for (int q : gi.trc[k]) {
                    CoronaTree tq = build_tree(ctx, q, true, TreeStage::trees);
                    for (int p : tq.t_tree) touched.insert(p);
                }
                for (int p : touched) {
                    int c = ++count[static_cast<int>(k)][p];
                    out.max_overlap = std::max(out.max_overlap, c);
                }
            }
        }
    }
    out.within_bound = out.max_overlap <= out.bound;
    return out;
}

// ---------------------------------------------------------------------------
// eta
// ---------------------------------------------------------------------------

namespace {

double halton(int index, int base) {
    double f = 1.0, r = 0.0;
    for (int i = index; i > 0; i /= base) {
        f /= base;
        r += f * (i % base);
    }
    return r;
}

// deterministic low-discrepancy points in the unit ball of R^d
std::vector<Vec> halton_ball(int count, int d) {
    static const int bases[kMaxDim] = {2, 3, 5, 7, 11, 13, 17, 19};
    std::vector<Vec> out;
    int idx = 1;
    while (static_cast<int>(out.size()) < count) {
        Vec u(d);
        for (int k = 0; k < d; ++k) u[k] = 2.0 * halton(idx, bases[k]) - 1.0;
        ++idx;
        if (u.norm2() <= 1.0) out.push_back(u);
        if (idx > 1000 * count + 1000) break;  // cannot happen for d <= 8
    }
    return out;
}

}  // namespace

EtaMeasure eta_measure(const CoronaContext& ctx, const CoronaTree& tree, int m_quad) {
    if (m_quad < 1) throw std::runtime_error("eta_measure: m_quad >= 1");
    const Lattice& lat = ctx.lattice();
    const AtomicMeasure& mu = lat.measure();
    const int d = mu.dim();
    EtaMeasure out;
    out.reg_cubes = tree.reg;
    out.m_quad = m_quad;

    std::vector<Vec> unit = halton_ball(m_quad, d);
    std::vector<double> pos;
    std::vector<double> w;
    for (int q : tree.reg) {
        const Cube& c = lat.cube(q);
        out.cube_mass.push_back(c.mass);
        const double* xq = mu.position(c.center_atom);
        double rad = 0.5 * c.r;  // the ball (1/2) B(Q)
        for (int k = 0; k < m_quad; ++k) {
            for (int i = 0; i < d; ++i) pos.push_back(xq[i] + rad * unit[static_cast<size_t>(k)][i]);
            w.push_back(c.mass / m_quad);
        }
    }
    if (!w.empty())
        out.atoms.emplace(d, std::move(pos), std::move(w), "eta", mu.r_atom() / (4.0 * m_quad));
    return out;
}

Vec riesz_eta(const EtaMeasure& eta, const Vec& x) {
    if (!eta.atoms) return Vec(x.dim);
    const AtomicMeasure& a = *eta.atoms;
    const int n = a.n();
    Vec acc(a.dim());
    Kahan comp[kMaxDim];
    for (int j = 0; j < a.size(); ++j) {
        Vec diff = x - a.position_vec(j);
        if (diff.norm2() == 0) continue;
        Vec k = riesz_kernel(diff, n);
        for (int i = 0; i < a.dim(); ++i) comp[i].add(a.weight(j) * k[i]);
    }
    for (int i = 0; i < a.dim(); ++i) acc[i] = comp[i].value();
    return acc;
}

// ---------------------------------------------------------------------------
// Transference diagnostics
// ---------------------------------------------------------------------------

double q_reg_coeff(const CoronaContext& ctx, const CoronaTree& tree, int cube_id) {
    const Lattice& lat = ctx.lattice();
    const Cube& q = lat.cube(cube_id);
    Kahan acc;
    for (int p : tree.reg) {
        const Cube& pc = lat.cube(p);
        double dd = pc.ell + lat.dist_cube_to_cube(p, cube_id) + q.ell;
        acc.add(pc.ell * pc.mass / std::pow(dd, ctx.config().n + 1));
    }
    return acc.value();
}

namespace {

// R(chi_{2R \ 2Q} mu)(x) for atoms x in cube `q`, restricted to atoms of the
// e' region; appended into `out`
void localized_field(const Lattice& lat, const std::vector<int>& atoms_2r, int q,
                     const std::vector<char>& e1_mask, std::map<int, Vec>& out) {
    const AtomicMeasure& mu = lat.measure();
    const int n = mu.n();
    std::vector<char> in_2q(static_cast<size_t>(mu.size()), 0);
    for (int cid : lat.lambda_region(q, 2.0))
        for (int a : lat.cube(cid).atoms) in_2q[static_cast<size_t>(a)] = 1;
    for (int x : lat.cube(q).atoms) {
        if (!e1_mask[static_cast<size_t>(x)]) continue;
        Kahan comp[kMaxDim];
        const double* xp = mu.position(x);
        for (int y : atoms_2r) {
            if (in_2q[static_cast<size_t>(y)]) continue;
            Vec diff(mu.dim());
            const double* yp = mu.position(y);
            for (int i = 0; i < mu.dim(); ++i) diff[i] = xp[i] - yp[i];
            if (diff.norm2() == 0) continue;
            Vec k = riesz_kernel(diff, n);
            for (int i = 0; i < mu.dim(); ++i) comp[i].add(mu.weight(y) * k[i]);
        }
        Vec v(mu.dim());
        for (int i = 0; i < mu.dim(); ++i) v[i] = comp[i].value();
        out[x] = v;
    }
}

Vec weighted_mean(const AtomicMeasure& mu, const std::vector<Vec>& field,
                  const std::vector<int>& atoms) {
    Kahan comp[kMaxDim];
    Kahan mass;
    for (int a : atoms) {
        mass.add(mu.weight(a));
        for (int i = 0; i < mu.dim(); ++i) comp[i].add(mu.weight(a) * field[static_cast<size_t>(a)][i]);
    }
    Vec out(mu.dim());
    double m = mass.value();
    if (m > 0)
        for (int i = 0; i < mu.dim(); ++i) out[i] = comp[i].value() / m;
    return out;
}

}  // namespace

TransferenceDiagnostics transference_diagnostics(const CoronaContext& ctx, const CoronaTree& tree,
                                                 const std::vector<Vec>& pv_field, double p) {
    const Lattice& lat = ctx.lattice();
    const AtomicMeasure& mu = lat.measure();
    const StoppingConfig& cfg = ctx.config();
    TransferenceDiagnostics out;

    std::vector<int> atoms_2r = lat.region_atoms(lat.lambda_region(tree.root, 2.0));

    for (int q : tree.reg)
        localized_field(lat, atoms_2r, q, tree.e1.atom_mask, out.r_treg);
    for (int q : tree.end_tilde)
        localized_field(lat, atoms_2r, q, tree.e1.atom_mask, out.r_ttilde);

    // Delta_{T~} R mu with the 2R mean, plus the exact mean-zero check with
    // the mean over union(End~) u Z
    Vec mean_2r = weighted_mean(mu, pv_field, atoms_2r);
    std::vector<int> support;  // union(End~) u Z atoms
    std::map<int, Vec> raw;    // per-atom value before subtracting the mean
    for (int q : tree.end_tilde) {
        Vec mq = weighted_mean(mu, pv_field, lat.cube(q).atoms);
        for (int a : lat.cube(q).atoms) {
            raw[a] = mq;
            support.push_back(a);
        }
    }
    for (int a : tree.z_atoms) {
        if (raw.count(a)) continue;  // End~ and Z are disjoint; guarded anyway
        raw[a] = pv_field[static_cast<size_t>(a)];
        support.push_back(a);
    }
    std::sort(support.begin(), support.end());
    support.erase(std::unique(support.begin(), support.end()), support.end());

    Kahan l2;
    for (int a : support) {
        Vec v = raw[a] - mean_2r;
        out.delta_ttilde[a] = v.norm();
        l2.add(mu.weight(a) * v.norm2());
    }
    out.delta_l2 = l2.value();

    // mean-zero identity against the support mean
    Kahan mass;
    Kahan comp[kMaxDim];
    for (int a : support) {
        mass.add(mu.weight(a));
        for (int i = 0; i < mu.dim(); ++i) comp[i].add(mu.weight(a) * raw[a][i]);
    }
    Vec mean_support(mu.dim());
    if (mass.value() > 0)
        for (int i = 0; i < mu.dim(); ++i) mean_support[i] = comp[i].value() / mass.value();
    Kahan resid[kMaxDim];
    Kahan scale;
    for (int a : support) {
        Vec v = raw[a] - mean_support;
        scale.add(mu.weight(a) * v.norm());
        for (int i = 0; i < mu.dim(); ++i) resid[i].add(mu.weight(a) * v[i]);
    }
    Vec rv(mu.dim());
    for (int i = 0; i < mu.dim(); ++i) rv[i] = resid[i].value();
    out.mean_zero_residual = scale.value() > 0 ? rv.norm() / scale.value() : 0.0;

    // ---- End~ splitting ----
    std::set<int> mneg_set(tree.m_neg.begin(), tree.m_neg.end());
    std::set<int> stop2_set(tree.stop2.begin(), tree.stop2.end());
    std::set<int> hd1_set(tree.hd1_e1.begin(), tree.hd1_e1.end());
    std::set<int> ld_set(tree.fam.ld.begin(), tree.fam.ld.end());
    std::set<int> neg_end;
    {
        std::set<int> neg_all(tree.neg.begin(), tree.neg.end());
        for (int s : tree.stop2)
            if (neg_all.count(s)) neg_end.insert(s);
    }

    auto classify = [&](int e) -> std::string {
        if (mneg_set.count(e)) return "mneg";
        // walk up to the Stop_2 member that owns e
        int s = e;
        while (s >= 0 && !stop2_set.count(s)) s = lat.cube(s).parent;
        if (s < 0) return "ndb1";  // cannot happen for End \ Neg members
        // inside an HD_1(e'(R)) subtree?
        int q1 = s;
        while (q1 >= 0 && !hd1_set.count(q1)) q1 = lat.cube(q1).parent;
        if (q1 >= 0) {
            auto it = tree.hd1_sub.find(q1);
            if (it != tree.hd1_sub.end()) {
                const StoppingFamilies& sub = it->second;
                if (std::find(sub.ld.begin(), sub.ld.end(), s) != sub.ld.end()) return "ld2";
                std::set<int> shd(sub.hd.begin(), sub.hd.end());
                std::set<int> sndb(sub.ndb.begin(), sub.ndb.end());
                if (shd.count(s) && !sndb.count(s)) return "hd2";
                return "ndb2";
            }
            return "ndb2";
        }
        if (ld_set.count(s)) return "ld1";
        return "ndb1";
    };

    for (const char* k : {"ld1", "ndb1", "ld2", "ndb2", "hd2", "mneg"}) out.split[k] = {};
    for (int e : tree.end_tilde) out.split[classify(e)].push_back(e);

    const Cube& rc = lat.cube(tree.root);
    auto bound_denominator = [&](const std::string& fam, int q) -> double {
        double n1 = cfg.n + 1.0;
        if (fam == "ld1")
            return std::pow(cfg.delta0, 1.0 / n1) * std::pow(cfg.lambda_cap, cfg.n / n1) * rc.theta;
        if (fam == "ld2")
            return std::pow(cfg.delta0, 1.0 / n1) * std::pow(cfg.lambda_cap, 1.0 + cfg.n / n1) *
                   rc.theta;
        if (fam == "ndb1") return cfg.lambda_cap * rc.theta;
        if (fam == "ndb2" || fam == "hd2") return cfg.lambda_cap * cfg.lambda_cap * rc.theta;
        return std::pow(lat.cube(q).ell / rc.ell, 1.0 / 3.0) * rc.theta;  // mneg
    };

    for (auto& [fam, ids] : out.split) {
        Kahan sp, sq;
        double worst = 0;
        for (int q : ids) {
            const Cube& c = lat.cube(q);
            sp.add(std::pow(c.p_coeff, p) * c.mass);
            sq.add(std::pow(q_reg_coeff(ctx, tree, q), p) * c.mass);
            double den = bound_denominator(fam, q);
            if (den > 0) worst = std::max(worst, c.p_coeff / den);
        }
        out.sigma_p_pot[fam] = sp.value();
        out.sigma_p_qreg[fam] = sq.value();
        out.poisson_bound_const[fam] = worst;
    }

    // Reg splitting sums (classified by the owning End~/Neg cube)
    {
        std::map<std::string, std::vector<int>> reg_split;
        for (const char* k :
             {"reg:ld1", "reg:ndb1", "reg:ld2", "reg:ndb2", "reg:hd2", "reg:mneg", "reg:neg",
              "reg:ot", "reg:db"})
            reg_split[k] = {};
        std::set<int> end_tilde_set(tree.end_tilde.begin(), tree.end_tilde.end());
        std::set<int> end_set(tree.end.begin(), tree.end.end());
        for (int pr : tree.reg) {
            int e = pr;
            while (e >= 0 && !end_tilde_set.count(e)) e = lat.cube(e).parent;
            std::string key;
            if (e >= 0) {
                key = "reg:" + classify(e);
                if (ctx.in_db(e)) reg_split["reg:db"].push_back(pr);
            } else {
                int e2 = pr;
                while (e2 >= 0 && !(end_set.count(e2) && neg_end.count(e2)))
                    e2 = lat.cube(e2).parent;
                key = e2 >= 0 ? "reg:neg" : "reg:ot";
            }
            reg_split[key].push_back(pr);
        }
        for (auto& [fam, ids] : reg_split) {
            Kahan sp, sq;
            for (int q : ids) {
                const Cube& c = lat.cube(q);
                sp.add(std::pow(c.p_coeff, p) * c.mass);
                sq.add(std::pow(q_reg_coeff(ctx, tree, q), p) * c.mass);
            }
            out.split[fam] = ids;
            out.sigma_p_pot[fam] = sp.value();
            out.sigma_p_qreg[fam] = sq.value();
        }
    }
    return out;
}

DichotomyProbe dichotomy_probe(const CoronaContext& ctx, const CoronaTree& tree,
                               const std::vector<Vec>& pv_field) {
    const Lattice& lat = ctx.lattice();
    const AtomicMeasure& mu = lat.measure();
    DichotomyProbe out;
    Kahan zm;
    for (int a : tree.z_atoms) zm.add(mu.weight(a));
    out.z_mass = zm.value();
    out.z_threshold = ctx.config().eps_z * lat.cube(tree.root).mass;
    out.alt_a = out.z_mass > out.z_threshold;

    TransferenceDiagnostics diag =
        transference_diagnostics(ctx, tree, pv_field, ctx.config().p0);
    out.delta_l2 = diag.delta_l2;
    out.delta_threshold = tree.sigma_hd1_e1 / ctx.config().lambda_cap;
    out.alt_b = out.delta_l2 > out.delta_threshold;
    out.miss = !out.alt_a && !out.alt_b;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void CoronaTree::serialize(std::ostream& os) const {
    os << "{\"root\":" << root << ",\"mdw\":" << (mdw ? 1 : 0) << ",\"forced\":" << (forced ? 1 : 0)
       << ",\"h\":" << h_sel.h << ",\"h_miss\":" << (h_sel.lemma_miss ? 1 : 0)
       << ",\"tractable\":" << (tractable ? 1 : 0) << ",\"typical\":" << (typical ? 1 : 0)
       << ",\"ell0\":" << fmt_double(ell0_used) << ",\"sigma_r\":" << fmt_double(sigma_r)
       << ",\"sigma_hd1_e\":" << fmt_double(sigma_hd1_e)
       << ",\"sigma_hd2\":" << fmt_double(sigma_hd2) << "}\n";
    auto fam_line = [&](const char* tag, const std::vector<int>& ids) {
        os << "{\"fam\":\"" << tag << "\",\"cubes\":[";
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) os << ',';
            os << ids[i];
        }
        os << "]}\n";
    };
    fam_line("hd", fam.hd);
    fam_line("ld", fam.ld);
    fam_line("ndb", fam.ndb);
    fam_line("stop", fam.stop);
    fam_line("stop_e1", stop_e1);
    fam_line("hd1_e1", hd1_e1);
    fam_line("hd2_e1", hd2_e1);
    fam_line("stop2", stop2);
    fam_line("neg", neg);
    fam_line("end", end);
    fam_line("m_neg", m_neg);
    fam_line("end_tilde", end_tilde);
    fam_line("reg", reg);
    fam_line("t_tree", t_tree);
    fam_line("t_tilde", t_tilde);
    os << "{\"z_atoms\":" << z_atoms.size() << ",\"z_tilde_atoms\":" << z_tilde_atoms.size()
       << ",\"e1_atoms\":" << e1.atoms.size() << "}\n";
}

uint64_t CoronaTree::hash() const {
    std::ostringstream ss;
    serialize(ss);
    Fnv1a h;
    h.add(ss.str());
    return h.h;
}

}  // namespace rlab
