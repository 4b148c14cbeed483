#include "rlab/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace rlab {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    ExperimentConfig cfg;
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    while (std::getline(f, line)) {
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (!k.empty()) cfg.kv[k] = v;
    }
    return cfg;
}

void ExperimentConfig::apply_override(const std::string& kev) {
    size_t eq = kev.find('=');
    if (eq == std::string::npos) throw std::runtime_error("override must be key=value: " + kev);
    kv[kev.substr(0, eq)] = kev.substr(eq + 1);
}

std::string ExperimentConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}
double ExperimentConfig::get_num(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : parse_double(it->second);
}
int ExperimentConfig::get_int(const std::string& key, int fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stoi(it->second);
}
bool ExperimentConfig::get_flag(const std::string& key, bool fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    return it->second == "1" || it->second == "true" || it->second == "yes";
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

void ExperimentReport::write_csv(std::ostream& os) const {
    os << "schema,command,profile,instance,anchor,lhs,rhs,constant,note\n";
    for (const auto& r : rows) {
        os << schema << ',' << command << ',' << profile << ',' << r.instance << ',' << r.anchor
           << ',' << fmt_double(r.lhs) << ',' << fmt_double(r.rhs) << ',' << fmt_double(r.constant)
           << ',' << r.note << '\n';
    }
}

void ExperimentReport::write_jsonl(std::ostream& os) const {
    for (const auto& r : rows) {
        os << "{\"schema\":" << schema << ",\"command\":\"" << command << "\",\"profile\":\""
           << profile << "\",\"instance\":\"" << r.instance << "\",\"anchor\":\"" << r.anchor
           << "\",\"lhs\":" << fmt_double(r.lhs) << ",\"rhs\":" << fmt_double(r.rhs)
           << ",\"constant\":" << fmt_double(r.constant) << ",\"note\":\"" << r.note << "\"}\n";
    }
}

void ExperimentReport::save(const std::string& out_prefix) const {
    {
        std::ofstream f(out_prefix + "_report.csv");
        if (!f) throw std::runtime_error("cannot write " + out_prefix + "_report.csv");
        write_csv(f);
    }
    {
        std::ofstream f(out_prefix + "_report.jsonl");
        if (!f) throw std::runtime_error("cannot write " + out_prefix + "_report.jsonl");
        write_jsonl(f);
    }
}

// ---------------------------------------------------------------------------
// Assembly from config
// ---------------------------------------------------------------------------

AtomicMeasure measure_from_config(const ExperimentConfig& cfg) {
    std::string kind = cfg.get("kind", "segment");
    if (kind == "file") return read_measure_file(cfg.get("path"));
    if (kind == "segment") return gen_segment(cfg.get_int("count", 1024));
    if (kind == "circle") return gen_circle(cfg.get_int("count", 1024));
    if (kind == "plane_patch") return gen_plane_patch(cfg.get_int("side", 32));
    if (kind == "cantor4" || kind == "cantor_4corner")
        return gen_cantor_4corner(cfg.get_int("generation", 4));
    if (kind == "cantor")
        return gen_cantor_general(cfg.get_int("generation", 4), cfg.get_num("ratio", 0.25));
    if (kind == "lipschitz_graph") {
        double amp = cfg.get_num("amplitude", 0.1);
        double freq = cfg.get_num("frequency", 1.0);
        if (amp * 2 * M_PI * freq > 1.0)
            throw std::runtime_error("lipschitz_graph: amplitude*2*pi*frequency must be <= 1");
        return gen_lipschitz_graph(
            [amp, freq](double x) { return amp * std::sin(2 * M_PI * freq * x); },
            cfg.get_int("count", 1024));
    }
    if (kind == "union") {
        ExperimentConfig a, b;
        for (auto& [k, v] : cfg.kv) {
            if (k.rfind("a_", 0) == 0) a.kv[k.substr(2)] = v;
            if (k.rfind("b_", 0) == 0) b.kv[k.substr(2)] = v;
        }
        return gen_union(measure_from_config(a), measure_from_config(b),
                         cfg.get_num("alpha", 0.5));
    }
    if (kind == "rescale") {
        ExperimentConfig base;
        for (auto& [k, v] : cfg.kv)
            if (k.rfind("base_", 0) == 0) base.kv[k.substr(5)] = v;
        return push_forward_dilate(measure_from_config(base), cfg.get_num("t", 2.0));
    }
    if (kind == "two_density") {
        auto seg = gen_segment(cfg.get_int("count", 512));
        std::vector<double> pos = seg.positions_flat();
        std::vector<double> w(seg.weights());
        double alpha = cfg.get_num("alpha", 0.5);
        for (double& x : w) x *= alpha;
        SplitMix64 rng(static_cast<uint64_t>(cfg.get_int("seed", 7)));
        int cl = cfg.get_int("cluster", 128);
        double cx = cfg.get_num("cluster_x", 0.31);
        double rad = cfg.get_num("cluster_r", 2e-3);
        for (int i = 0; i < cl; ++i) {
            double a = 2 * M_PI * rng.next_f01();
            double r = rad * std::sqrt(rng.next_f01());
            pos.push_back(cx + r * std::cos(a));
            pos.push_back(r * std::sin(a));
            w.push_back((1 - alpha) / cl);
        }
        return AtomicMeasure(2, std::move(pos), std::move(w), "two_density");
    }
    throw std::runtime_error("unknown measure kind: " + kind);
}

LatticeParams lattice_from_config(const ExperimentConfig& cfg) {
    LatticeParams p;
    p.a0 = cfg.get_int("a0", 4);
    p.c0 = cfg.get_num("c0", 1.5);
    p.k_max = cfg.get_int("k_max", 7);
    p.gamma = cfg.get_num("gamma", 0.9);
    p.split_to_atoms = cfg.get_flag("split_to_atoms", false);
    return p;
}

StoppingConfig stopping_from_config(const ExperimentConfig& cfg, int n) {
    std::string profile = cfg.get("profile", "desk");
    StoppingConfig sc = profile == "paper"
                            ? StoppingConfig::paper(n, cfg.get_int("a0", 4), cfg.get_int("k0", 6),
                                                    cfg.get_num("c0_small", 1),
                                                    cfg.get_num("c_prime", 1))
                            : StoppingConfig::desk(n, cfg.get_int("a0", 4));
    if (cfg.kv.count("b_const")) sc.b_const = cfg.get_num("b_const", sc.b_const);
    if (cfg.kv.count("delta0")) sc.delta0 = cfg.get_num("delta0", sc.delta0);
    if (cfg.kv.count("lambda0")) sc.lambda0 = cfg.get_num("lambda0", sc.lambda0);
    if (cfg.kv.count("eps_z")) sc.eps_z = cfg.get_num("eps_z", sc.eps_z);
    if (cfg.kv.count("ell0")) sc.ell0 = cfg.get_num("ell0", sc.ell0);
    if (cfg.kv.count("c2")) sc.c2 = cfg.get_num("c2", sc.c2);
    if (cfg.kv.count("cc2")) sc.cc2 = cfg.get_num("cc2", sc.cc2);
    if (cfg.kv.count("k_lambda")) sc.k_lambda = cfg.get_int("k_lambda", sc.k_lambda);
    return sc;
}

ScaleGrid grid_from_config(const ExperimentConfig& cfg, const AtomicMeasure& mu) {
    double rho = cfg.get_num("rho", M_SQRT2);
    double rmin = cfg.get_num("r_min", 0);
    double rmax = cfg.get_num("r_max", 0);
    if (rmin <= 0 || rmax <= 0) return natural_grid(mu, rho);
    return ScaleGrid(std::max(rmin, mu.r_atom()), rmax, rho);
}

RieszFieldOptions riesz_from_config(const ExperimentConfig& cfg) {
    RieszFieldOptions opt;
    opt.mode = cfg.get("riesz", "exact") == "treecode" ? RieszMode::treecode : RieszMode::exact;
    opt.theta_open = cfg.get_num("theta_open", 0.5);
    return opt;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace {

double theta0_of(const AtomicMeasure& mu) {
    double rmax = std::max(mu.diameter(), mu.r_atom() * 8);
    return growth_constant(mu, std::max(mu.r_atom(), rmax * 1e-6), 2 * rmax, 128).theta0;
}

}  // namespace

ExperimentReport cmd_comparability(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "comparability";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    ScaleGrid grid = grid_from_config(cfg, mu);
    RieszFieldOptions ropt = riesz_from_config(cfg);

    double e_beta = beta_wolff_energy(mu, grid);
    double r_l2 = riesz_l2_norm(mu, ropt);
    double th0 = theta0_of(mu);
    double base = th0 * th0 * mu.total_mass();

    ReportRow fwd;
    fwd.instance = mu.label();
    fwd.anchor = "beta_wolff_le_riesz_l2_plus_growth";
    fwd.lhs = e_beta;
    fwd.rhs = r_l2 + base;
    fwd.constant = fwd.rhs > 0 ? fwd.lhs / fwd.rhs : 0;
    rep.rows.push_back(fwd);

    ReportRow bwd;
    bwd.instance = mu.label();
    bwd.anchor = "riesz_l2_le_beta_wolff_plus_growth";
    bwd.lhs = r_l2;
    bwd.rhs = e_beta + base;
    bwd.constant = bwd.rhs > 0 ? bwd.lhs / bwd.rhs : 0;
    rep.rows.push_back(bwd);

    ReportRow parts;
    parts.instance = mu.label();
    parts.anchor = "theta0_squared_mass";
    parts.lhs = base;
    parts.rhs = th0;
    parts.note = "lhs=theta0^2*mass;rhs=theta0";
    rep.rows.push_back(parts);
    return rep;
}

ExperimentReport cmd_main_prop(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "mainprop";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    Lattice lat(mu, lattice_from_config(cfg));
    CoronaContext ctx(lat, stopping_from_config(cfg, mu.n()));
    RieszFieldOptions ropt = riesz_from_config(cfg);

    Kahan lhs;
    for (int q : ctx.db_cubes()) lhs.add(ctx.einf9(q));
    double r_l2 = riesz_l2_norm(mu, ropt);
    double th0 = theta0_of(mu);

    ReportRow row;
    row.instance = mu.label();
    row.anchor = "db_einf_sum_le_riesz_l2_plus_growth";
    row.lhs = lhs.value();
    row.rhs = r_l2 + th0 * th0 * mu.total_mass();
    row.constant = row.rhs > 0 ? row.lhs / row.rhs : 0;
    row.note = "db_count=" + std::to_string(ctx.db_cubes().size());
    rep.rows.push_back(row);

    ReportRow companion;
    companion.instance = mu.label();
    companion.anchor = "dyadic_beta_energy_le_riesz_l2_plus_growth";
    companion.lhs = dyadic_beta_energy(lat);
    companion.rhs = row.rhs;
    companion.constant = companion.rhs > 0 ? companion.lhs / companion.rhs : 0;
    rep.rows.push_back(companion);
    return rep;
}

ExperimentReport cmd_bilip(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "bilip";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    ScaleGrid grid = grid_from_config(cfg, mu);
    RieszFieldOptions ropt = riesz_from_config(cfg);

    std::string map = cfg.get("map", "diag");
    double lconst = 1;
    AtomicMeasure image = [&]() {
        if (map == "diag") {
            double ax = cfg.get_num("ax", 2.0), ay = cfg.get_num("ay", 1.0);
            lconst = std::max({std::abs(ax), std::abs(ay), 1 / std::abs(ax), 1 / std::abs(ay)});
            return push_forward_diag(mu, {ax, ay});
        }
        if (map == "rotate") {
            lconst = 1;
            return push_forward_rotate2d(mu, cfg.get_num("angle", 0.7));
        }
        throw std::runtime_error("bilip: map must be diag or rotate");
    }();

    double be_before = beta_wolff_energy(mu, grid);
    ScaleGrid image_grid(grid.r_min / lconst, grid.r_max * lconst, grid.rho);
    double be_after = beta_wolff_energy(image, image_grid);
    double rz_before = riesz_l2_norm(mu, ropt);
    double rz_after = riesz_l2_norm(image, ropt);

    double a_exp = cfg.get_num("exponent", 2.0 * (mu.n() + 2));
    double lo = std::pow(lconst, -a_exp), hi = std::pow(lconst, a_exp);

    ReportRow b;
    b.instance = mu.label();
    b.anchor = "beta_wolff_bilip_ratio";
    b.lhs = be_after;
    b.rhs = be_before;
    b.constant = be_before > 0 ? be_after / be_before : (be_after > 0 ? -1 : 1);
    b.note = "window=[" + fmt_double(lo) + ";" + fmt_double(hi) + "]";
    rep.rows.push_back(b);

    ReportRow r;
    r.instance = mu.label();
    r.anchor = "riesz_l2_bilip_ratio";
    r.lhs = rz_after;
    r.rhs = rz_before;
    r.constant = rz_before > 0 ? rz_after / rz_before : (rz_after > 0 ? -1 : 1);
    r.note = b.note;
    rep.rows.push_back(r);
    return rep;
}

ExperimentReport cmd_capacity(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "capacity";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    ScaleGrid grid = grid_from_config(cfg, mu);

    // max of the potential over support atoms for the unit-mass measure;
    // both parts of U are 1-homogeneous in the mass scale, so U_{c mu} = c U_mu
    // and the bisection on c converges against max U = 1
    int stride = std::max(1, mu.size() / cfg.get_int("centers", 256));
    double u1 = 0;
    for (int i = 0; i < mu.size(); i += stride)
        u1 = std::max(u1, jones_wolff_potential(mu, mu.position(i), grid));

    ReportRow row;
    row.instance = mu.label();
    row.anchor = "capacity_proxy_sup_mass_with_unit_potential";
    if (!(u1 > 0) || !std::isfinite(u1)) {
        row.lhs = 0;
        row.note = "unbounded_potential";
        rep.rows.push_back(row);
        return rep;
    }
    double lo = 0, hi = 2.0 / u1;
    for (int it = 0; it < 60; ++it) {
        double c = 0.5 * (lo + hi);
        double u = c * u1;
        if (std::abs(u - 1.0) <= 1e-3) {
            lo = hi = c;
            break;
        }
        (u > 1.0 ? hi : lo) = c;
    }
    double c_star = 0.5 * (lo + hi);
    row.lhs = c_star * mu.total_mass();
    row.rhs = u1;
    row.constant = c_star;
    rep.rows.push_back(row);
    return rep;
}

ExperimentReport cmd_corona_trace(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "corona";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    Lattice lat(mu, lattice_from_config(cfg));
    CoronaContext ctx(lat, stopping_from_config(cfg, mu.n()));
    RieszFieldOptions ropt = riesz_from_config(cfg);

    std::string out = cfg.get("out", "");
    if (!out.empty()) {
        std::ofstream lf(out + "_lattice.jsonl");
        lat.dump_jsonl(lf);
        rep.artifacts.push_back(out + "_lattice.jsonl");
    }

    ReportRow dbrow;
    dbrow.instance = mu.label();
    dbrow.anchor = "db_family_size";
    dbrow.lhs = static_cast<double>(ctx.db_cubes().size());
    rep.rows.push_back(dbrow);

    std::vector<int> gdf = gdf_family(ctx);
    ReportRow gdfrow;
    gdfrow.instance = mu.label();
    gdfrow.anchor = "gdf_family_size";
    gdfrow.lhs = static_cast<double>(gdf.size());
    rep.rows.push_back(gdfrow);

    Layers layers = build_layers(ctx);
    ReportRow lyrow;
    lyrow.instance = mu.label();
    lyrow.anchor = "layers_props_i_ii";
    lyrow.lhs = layers.prop_i_ok ? 1 : 0;
    lyrow.rhs = layers.prop_ii_ok ? 1 : 0;
    lyrow.constant = layers.prop_iii_constant;
    lyrow.note = "m0=" + std::to_string(layers.m0_emp);
    rep.rows.push_back(lyrow);

    OverlapReport ov = overlap_report(ctx, layers, cfg.get_int("depth_cap", 4));
    ReportRow ovrow;
    ovrow.instance = mu.label();
    ovrow.anchor = "tree_overlap_count_vs_log2_bound";
    ovrow.lhs = ov.max_overlap;
    ovrow.rhs = ov.bound;
    ovrow.constant = ov.bound > 0 ? ov.max_overlap / ov.bound : 0;
    ovrow.note = ov.within_bound ? "ok" : "miss_flagged";
    rep.rows.push_back(ovrow);

    std::vector<Vec> pv = riesz_pv_field(mu, ropt);
    std::ofstream tf;
    if (!out.empty()) {
        tf.open(out + "_trees.jsonl");
        rep.artifacts.push_back(out + "_trees.jsonl");
    }

    // per-root trace over the selected layer roots (falling back to the MDW
    // roots of a mid level when the selection is empty)
    std::vector<int> roots;
    for (auto& [jh, sel] : layers.l) {
        (void)jh;
        roots.insert(roots.end(), sel.begin(), sel.end());
    }
    if (roots.empty()) {
        int lvl = std::min(3, lat.levels() - 1);
        for (int cid : lat.level_cubes(lvl))
            if (is_mdw(ctx, cid)) roots.push_back(cid);
    }
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());

    for (int root : roots) {
        ReportRow rr;
        rr.instance = mu.label() + "#root" + std::to_string(root);
        try {
            CoronaTree t = build_tree(ctx, root);
            if (t.root < 0) continue;
            if (tf.is_open()) t.serialize(tf);

            ReportRow sg;
            sg.instance = rr.instance;
            sg.anchor = "root_sigma_summary";
            sg.lhs = t.sigma_r;
            sg.rhs = t.sigma_hd1_e;
            sg.constant = t.sigma_hd2;
            sg.note = "lhs=sigma_R;rhs=sigma_HD1e;constant=sigma_HD2";
            rep.rows.push_back(sg);

            DichotomyProbe probe = dichotomy_probe(ctx, t, pv);
            rr.anchor = "dichotomy_z_mass_or_delta_l2";
            rr.lhs = probe.z_mass / std::max(lat.cube(root).mass, 1e-300);
            rr.rhs = probe.delta_l2;
            rr.constant = t.sigma_hd1_e1;
            std::string flags;
            flags += t.tractable ? "tractable" : "non_tractable";
            flags += t.typical ? "+typical" : "+non_typical";
            if (probe.alt_a) flags += "+alt_a";
            if (probe.alt_b) flags += "+alt_b";
            if (probe.miss) flags += "+dichotomy_miss";
            rr.note = flags;
        } catch (const std::exception& ex) {
            rr.anchor = "root_failed";
            rr.note = ex.what();
        }
        rep.rows.push_back(rr);
    }
    return rep;
}

ExperimentReport cmd_analyze(const ExperimentConfig& cfg) {
    ExperimentReport rep;
    rep.command = "analyze";
    rep.profile = cfg.get("profile", "desk");
    AtomicMeasure mu = measure_from_config(cfg);
    Lattice lat(mu, lattice_from_config(cfg));
    ScaleGrid grid = grid_from_config(cfg, mu);

    ReportRow growth;
    growth.instance = mu.label();
    growth.anchor = "growth_constant";
    growth.lhs = theta0_of(mu);
    growth.rhs = mu.total_mass();
    rep.rows.push_back(growth);

    ReportRow bw;
    bw.instance = mu.label();
    bw.anchor = "beta_wolff_energy";
    bw.lhs = beta_wolff_energy(mu, grid);
    rep.rows.push_back(bw);

    ReportRow dy;
    dy.instance = mu.label();
    dy.anchor = "dyadic_beta_energy";
    dy.lhs = dyadic_beta_energy(lat);
    rep.rows.push_back(dy);

    ReportRow w38;
    w38.instance = mu.label();
    w38.anchor = "wolff_38_energy";
    w38.lhs = wolff_38_energy(mu, grid);
    rep.rows.push_back(w38);

    std::string out = cfg.get("out", "");
    if (!out.empty()) {
        std::ofstream lf(out + "_lattice.jsonl");
        lat.dump_jsonl(lf);
        rep.artifacts.push_back(out + "_lattice.jsonl");
        std::ofstream mf(out + "_measure.txt");
        write_measure(mf, mu);
        rep.artifacts.push_back(out + "_measure.txt");

        // pv field dump: atom_id, components, |pv|
        auto pv = riesz_pv_field(mu, riesz_from_config(cfg));
        std::ofstream ff(out + "_field.csv");
        ff << "atom_id";
        for (int k = 0; k < mu.dim(); ++k) ff << ",pv_" << k;
        ff << ",pv_norm\n";
        for (int i = 0; i < mu.size(); ++i) {
            ff << i;
            for (int k = 0; k < mu.dim(); ++k) ff << ',' << fmt_double(pv[static_cast<size_t>(i)][k]);
            ff << ',' << fmt_double(pv[static_cast<size_t>(i)].norm()) << '\n';
        }
        rep.artifacts.push_back(out + "_field.csv");

        // per-cube energy contributions of the root region
        std::ofstream ef(out + "_energy.csv");
        write_energy_csv(ef, energy_E(lat, lat.root(), 9.0));
        rep.artifacts.push_back(out + "_energy.csv");
    }
    return rep;
}

}  // namespace rlab
