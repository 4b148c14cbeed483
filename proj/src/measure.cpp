#include "rlab/measure.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace rlab {

AtomicMeasure::AtomicMeasure(int dim, std::vector<double> positions, std::vector<double> weights,
                             std::string label, double r_atom_hint)
    : dim_(dim), pos_(std::move(positions)), w_(std::move(weights)), label_(std::move(label)) {
    if (dim_ < 2 || dim_ > kMaxDim) throw std::runtime_error("measure: dim must be in [2,8]");
    if (w_.empty()) throw std::runtime_error("measure: empty atom list");
    if (pos_.size() != w_.size() * static_cast<size_t>(dim_))
        throw std::runtime_error("measure: positions/weights size mismatch");

    Kahan total;
    for (double w : w_) {
        if (!(w > 0) || !std::isfinite(w)) throw std::runtime_error("measure: weights must be positive finite");
        total.add(w);
    }
    total_mass_ = total.value();
    if (!(total_mass_ > 0) || !std::isfinite(total_mass_))
        throw std::runtime_error("measure: total mass must be positive finite");

    tree_.build(pos_.data(), w_.data(), size(), dim_);

    // diameter via bbox diagonal upper bound is enough for lattice scaling,
    // but we keep the exact value cheap for small N and bbox-based otherwise
    const auto& root = tree_.nodes().front();
    double diag2 = 0;
    for (int i = 0; i < dim_; ++i) {
        double w = root.bbox_hi[i] - root.bbox_lo[i];
        diag2 += w * w;
    }
    diameter_ = std::sqrt(diag2);

    if (r_atom_hint > 0) {
        r_atom_ = r_atom_hint;
    } else if (size() > 1) {
        double md2 = tree_.min_pairwise_dist2();
        r_atom_ = 0.5 * std::sqrt(md2);
        if (!(r_atom_ > 0)) r_atom_ = 1e-15 * std::max(1.0, diameter_);
    } else {
        r_atom_ = std::max(diameter_, 1e-12);
    }
    // invariant: r_atom <= min pairwise distance / 2 when atoms are distinct
    if (size() > 1) {
        double md = std::sqrt(tree_.min_pairwise_dist2());
        if (md > 0 && r_atom_ > 0.5 * md) r_atom_ = 0.5 * md;
    }
}

double ball_mass(const AtomicMeasure& mu, const Ball& b) {
    return mu.tree().mass_in_ball(b.center.v, b.radius);
}

GrowthReport growth_constant(const AtomicMeasure& mu, double r_min, double r_max,
                             int centers_per_scale) {
    if (!(r_min > 0) || !(r_min < r_max)) throw std::runtime_error("growth_constant: need 0 < r_min < r_max");
    if (r_min < mu.r_atom()) throw std::runtime_error("growth_constant: r_min below atomic resolution");
    if (centers_per_scale < 1) throw std::runtime_error("growth_constant: centers_per_scale >= 1");

    GrowthReport rep;
    rep.r_min = r_min;
    rep.r_max = r_max;
    rep.centers_per_scale = centers_per_scale;
    rep.witness_x = mu.position_vec(0);

    const int n = mu.n();
    const double rho = std::sqrt(2.0);
    std::vector<double> radii;
    for (double r = r_max; r >= r_min * (1 - 1e-12); r /= rho) radii.push_back(r);
    if (radii.empty() || radii.back() > r_min * (1 + 1e-12)) radii.push_back(r_min);

    int stride = std::max(1, mu.size() / centers_per_scale);
    for (double r : radii) {
        double rn = std::pow(r, n);
        for (int i = 0; i < mu.size(); i += stride) {
            double m = mu.tree().mass_in_ball(mu.position(i), r);
            double th = m / rn;
            if (th > rep.theta0) {
                rep.theta0 = th;
                rep.witness_x = mu.position_vec(i);
                rep.witness_r = r;
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

AtomicMeasure gen_segment(int count) {
    if (count < 1) throw std::runtime_error("segment: count >= 1");
    std::vector<double> pos;
    pos.reserve(static_cast<size_t>(count) * 2);
    std::vector<double> w(static_cast<size_t>(count), 1.0 / count);
    for (int i = 0; i < count; ++i) {
        pos.push_back((i + 0.5) / count);
        pos.push_back(0.0);
    }
    return AtomicMeasure(2, std::move(pos), std::move(w), "segment(" + std::to_string(count) + ")",
                         count > 1 ? 0.5 / count : 0.5);
}

AtomicMeasure gen_circle(int count) {
    if (count < 3) throw std::runtime_error("circle: count >= 3");
    std::vector<double> pos;
    pos.reserve(static_cast<size_t>(count) * 2);
    std::vector<double> w(static_cast<size_t>(count), 1.0 / count);
    for (int i = 0; i < count; ++i) {
        double a = 2.0 * M_PI * i / count;
        pos.push_back(std::cos(a));
        pos.push_back(std::sin(a));
    }
    return AtomicMeasure(2, std::move(pos), std::move(w), "circle(" + std::to_string(count) + ")");
}

AtomicMeasure gen_plane_patch(int side) {
    if (side < 1) throw std::runtime_error("plane_patch: side >= 1");
    std::vector<double> pos;
    pos.reserve(static_cast<size_t>(side) * side * 3);
    std::vector<double> w(static_cast<size_t>(side) * side, 1.0 / (static_cast<double>(side) * side));
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            pos.push_back((i + 0.5) / side);
            pos.push_back((j + 0.5) / side);
            pos.push_back(0.0);
        }
    return AtomicMeasure(3, std::move(pos), std::move(w),
                         "plane_patch(" + std::to_string(side) + ")", side > 1 ? 0.5 / side : 0.5);
}

AtomicMeasure gen_lipschitz_graph(const std::function<double(double)>& f, int count) {
    if (count < 2) throw std::runtime_error("lipschitz_graph: count >= 2");
    std::vector<double> pos;
    pos.reserve(static_cast<size_t>(count) * 2);
    std::vector<double> w(static_cast<size_t>(count), 1.0 / count);
    double h = 1.0 / count;
    double prev = 0;
    for (int i = 0; i < count; ++i) {
        double x = (i + 0.5) / count;
        double y = f(x);
        if (i > 0 && std::abs(y - prev) > h * (1 + 1e-9))
            throw std::runtime_error("lipschitz_graph: sampled slope exceeds 1");
        prev = y;
        pos.push_back(x);
        pos.push_back(y);
    }
    return AtomicMeasure(2, std::move(pos), std::move(w), "lipschitz_graph(" + std::to_string(count) + ")");
}

AtomicMeasure gen_cantor_general(int generation, double ratio) {
    if (generation < 0 || generation > 12) throw std::runtime_error("cantor: generation in [0,12]");
    if (!(ratio > 0) || ratio > 0.5) throw std::runtime_error("cantor: ratio in (0, 1/2]");
    // generation-g corner squares of the unit square; atoms at their centers
    std::vector<double> corners = {0.0, 0.0};  // lower-left corners, flat x,y
    double side = 1.0;
    for (int g = 0; g < generation; ++g) {
        std::vector<double> next;
        next.reserve(corners.size() * 4);
        double off = side * (1.0 - ratio);
        for (size_t i = 0; i + 1 < corners.size(); i += 2) {
            double x = corners[i], y = corners[i + 1];
            next.insert(next.end(), {x, y, x + off, y, x, y + off, x + off, y + off});
        }
        corners.swap(next);
        side *= ratio;
    }
    size_t count = corners.size() / 2;
    std::vector<double> pos(corners.size());
    for (size_t i = 0; i < count; ++i) {
        pos[2 * i] = corners[2 * i] + side / 2;
        pos[2 * i + 1] = corners[2 * i + 1] + side / 2;
    }
    std::vector<double> w(count, 1.0 / static_cast<double>(count));
    std::string name = ratio == 0.25 ? "cantor4(" + std::to_string(generation) + ")"
                                     : "cantor(" + std::to_string(generation) + "," + fmt_double(ratio) + ")";
    return AtomicMeasure(2, std::move(pos), std::move(w), name);
}

AtomicMeasure gen_cantor_4corner(int generation) { return gen_cantor_general(generation, 0.25); }

AtomicMeasure gen_union(const AtomicMeasure& a, const AtomicMeasure& b, double alpha) {
    if (a.dim() != b.dim()) throw std::runtime_error("union: dimension mismatch");
    if (!(alpha > 0) || !(alpha < 1)) throw std::runtime_error("union: alpha in (0,1)");
    std::vector<double> pos = a.positions_flat();
    pos.insert(pos.end(), b.positions_flat().begin(), b.positions_flat().end());
    std::vector<double> w;
    w.reserve(static_cast<size_t>(a.size() + b.size()));
    for (int i = 0; i < a.size(); ++i) w.push_back(alpha * a.weight(i) / a.total_mass());
    for (int i = 0; i < b.size(); ++i) w.push_back((1 - alpha) * b.weight(i) / b.total_mass());
    return AtomicMeasure(a.dim(), std::move(pos), std::move(w),
                         "union(" + a.label() + "," + b.label() + ")");
}

// ---------------------------------------------------------------------------
// Push-forward
// ---------------------------------------------------------------------------

AtomicMeasure push_forward(const AtomicMeasure& mu, const std::function<Vec(const Vec&)>& phi,
                           double bilipschitz_l, const std::string& label_suffix) {
    if (!(bilipschitz_l >= 1)) throw std::runtime_error("push_forward: bilipschitz constant >= 1");
    const int d = mu.dim();
    std::vector<double> pos;
    pos.reserve(mu.positions_flat().size());
    std::vector<double> w;
    w.reserve(static_cast<size_t>(mu.size()));

    constexpr double kMergeTol = 1e-12;
    for (int i = 0; i < mu.size(); ++i) {
        Vec y = phi(mu.position_vec(i));
        if (y.dim != d) throw std::runtime_error("push_forward: map changed dimension");
        // merge with an earlier image atom closer than the tolerance
        int hit = -1;
        for (size_t j = 0; j < w.size(); ++j) {
            if (dist(pos.data() + j * d, y.v, d) < kMergeTol) {
                hit = static_cast<int>(j);
                break;
            }
        }
        if (hit >= 0) {
            w[static_cast<size_t>(hit)] += mu.weight(i);
        } else {
            for (int k = 0; k < d; ++k) pos.push_back(y[k]);
            w.push_back(mu.weight(i));
        }
    }
    return AtomicMeasure(d, std::move(pos), std::move(w), mu.label() + label_suffix,
                         mu.r_atom() / bilipschitz_l);
}

AtomicMeasure push_forward_diag(const AtomicMeasure& mu, const std::vector<double>& diag) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (double t : diag) {
        lo = std::min(lo, std::abs(t));
        hi = std::max(hi, std::abs(t));
    }
    if (!(lo > 0)) throw std::runtime_error("push_forward_diag: singular map");
    double L = std::max(hi, 1.0 / lo);
    return push_forward(
        mu,
        [&](const Vec& x) {
            Vec y = x;
            for (int i = 0; i < x.dim && i < static_cast<int>(diag.size()); ++i) y[i] *= diag[i];
            return y;
        },
        L, "#diag");
}

AtomicMeasure push_forward_dilate(const AtomicMeasure& mu, double t) {
    return push_forward(
        mu, [&](const Vec& x) { Vec y = x; y *= t; return y; }, std::max(t, 1.0 / t), "#dilate");
}

AtomicMeasure push_forward_rotate2d(const AtomicMeasure& mu, double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    return push_forward(
        mu,
        [&](const Vec& x) {
            Vec y = x;
            y[0] = c * x[0] - s * x[1];
            y[1] = s * x[0] + c * x[1];
            return y;
        },
        1.0, "#rot");
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

void write_measure(std::ostream& os, const AtomicMeasure& mu) {
    std::string label = mu.label().empty() ? "-" : mu.label();
    for (char& c : label)
        if (c == ' ' || c == '\n' || c == '\t') c = '_';
    os << mu.dim() << ' ' << mu.n() << ' ' << mu.size() << ' ' << fmt_double(mu.r_atom()) << ' '
       << label << '\n';
    for (int i = 0; i < mu.size(); ++i) {
        const double* p = mu.position(i);
        for (int k = 0; k < mu.dim(); ++k) os << fmt_double(p[k]) << ' ';
        os << fmt_double(mu.weight(i)) << '\n';
    }
}

void write_measure_file(const std::string& path, const AtomicMeasure& mu) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_measure(f, mu);
}

AtomicMeasure read_measure(std::istream& is) {
    int d = 0, n = 0, count = 0;
    std::string r_atom_s, label;
    if (!(is >> d >> n >> count >> r_atom_s >> label)) throw std::runtime_error("measure file: bad header");
    if (n != d - 1) throw std::runtime_error("measure file: n != d-1");
    double r_atom = parse_double(r_atom_s);
    std::vector<double> pos;
    pos.reserve(static_cast<size_t>(count) * d);
    std::vector<double> w;
    w.reserve(static_cast<size_t>(count));
    std::string tok;
    for (int i = 0; i < count; ++i) {
        for (int k = 0; k < d; ++k) {
            if (!(is >> tok)) throw std::runtime_error("measure file: truncated atoms");
            pos.push_back(parse_double(tok));
        }
        if (!(is >> tok)) throw std::runtime_error("measure file: truncated atoms");
        w.push_back(parse_double(tok));
    }
    if (label == "-") label.clear();
    return AtomicMeasure(d, std::move(pos), std::move(w), label, r_atom);
}

AtomicMeasure read_measure_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    return read_measure(f);
}

}  // namespace rlab
