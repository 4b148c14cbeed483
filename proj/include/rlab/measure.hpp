#ifndef RLAB_MEASURE_HPP
#define RLAB_MEASURE_HPP

// Weighted atomic approximations of Radon measures in R^(n+1), the model
// measure generators, and mass/growth primitives. Measures are immutable
// after construction; every operation here is pure.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlab/core.hpp"
#include "rlab/spatial.hpp"

namespace rlab {

struct Ball {
    Vec center;
    double radius = 0;  // > 0
};

class AtomicMeasure {
public:
    // positions: flat count x dim array; weights all > 0.
    AtomicMeasure(int dim, std::vector<double> positions, std::vector<double> weights,
                  std::string label = "", double r_atom_hint = 0);

    int dim() const { return dim_; }
    int n() const { return dim_ - 1; }  // codimension-1 dimension
    int size() const { return static_cast<int>(w_.size()); }
    double r_atom() const { return r_atom_; }
    const std::string& label() const { return label_; }

    const double* position(int i) const { return pos_.data() + static_cast<size_t>(i) * dim_; }
    Vec position_vec(int i) const { return Vec::from(position(i), dim_); }
    double weight(int i) const { return w_[static_cast<size_t>(i)]; }
    const std::vector<double>& positions_flat() const { return pos_; }
    const std::vector<double>& weights() const { return w_; }

    double total_mass() const { return total_mass_; }
    double diameter() const { return diameter_; }

    const KdTree& tree() const { return tree_; }

private:
    int dim_;
    std::vector<double> pos_;
    std::vector<double> w_;
    std::string label_;
    double r_atom_;
    double total_mass_;
    double diameter_;
    KdTree tree_;
};

// Sum of weights of atoms with |x - center| <= radius (closed ball).
double ball_mass(const AtomicMeasure& mu, const Ball& b);

struct GrowthReport {
    double theta0 = 0;          // sup of mu(B(x,r))/r^n over the scan
    Vec witness_x;              // achieving center
    double witness_r = 0;       // achieving radius
    double r_min = 0, r_max = 0;
    int centers_per_scale = 0;
};

// Scans a geometric grid of radii in [r_min, r_max] and a deterministic
// subsample of support atoms as centers; r < r_atom is never scanned since
// an atomic measure has unbounded density below its resolution.
GrowthReport growth_constant(const AtomicMeasure& mu, double r_min, double r_max,
                             int centers_per_scale);

// ---------------------------------------------------------------------------
// Generators. All emit probability measures (total mass 1) and are
// deterministic functions of their parameters.
// ---------------------------------------------------------------------------

// N midpoint-quadrature atoms on the unit segment [0,1] x {0} in R^2.
AtomicMeasure gen_segment(int count);

// N equispaced atoms on the unit circle in R^2.
AtomicMeasure gen_circle(int count);

// side x side grid on the unit square {z=0} in R^3.
AtomicMeasure gen_plane_patch(int side);

// Graph of a sampled height function over [0,1]; |f'| must stay <= 1
// (checked against the sampled differences).
AtomicMeasure gen_lipschitz_graph(const std::function<double(double)>& f, int count);

// Generation-N four-corner Cantor set in R^2 with contraction ratio 1/4:
// 4^N atoms of weight 4^-N at the centers of the generation-N corner squares.
AtomicMeasure gen_cantor_4corner(int generation);

// Same construction with arbitrary contraction ratio in (0, 1/2].
AtomicMeasure gen_cantor_general(int generation, double ratio);

// Mass-weighted union: alpha * a + (1-alpha) * b, renormalized to mass 1.
AtomicMeasure gen_union(const AtomicMeasure& a, const AtomicMeasure& b, double alpha);

// ---------------------------------------------------------------------------
// Push-forward by a map with declared bilipschitz constant L.
// Weights are preserved; r_atom is rescaled by 1/L; image atoms closer than
// 1e-12 are merged (weights summed).
// ---------------------------------------------------------------------------
AtomicMeasure push_forward(const AtomicMeasure& mu, const std::function<Vec(const Vec&)>& phi,
                           double bilipschitz_l, const std::string& label_suffix = "#phi");

// Affine convenience wrappers.
AtomicMeasure push_forward_diag(const AtomicMeasure& mu, const std::vector<double>& diag);
AtomicMeasure push_forward_dilate(const AtomicMeasure& mu, double t);
AtomicMeasure push_forward_rotate2d(const AtomicMeasure& mu, double angle);

// ---------------------------------------------------------------------------
// File format: header "d n N r_atom label", then N lines "x_1 ... x_d w".
// Floats are written with shortest round-trip text.
// ---------------------------------------------------------------------------
void write_measure(std::ostream& os, const AtomicMeasure& mu);
void write_measure_file(const std::string& path, const AtomicMeasure& mu);
AtomicMeasure read_measure(std::istream& is);
AtomicMeasure read_measure_file(const std::string& path);

}  // namespace rlab

#endif
