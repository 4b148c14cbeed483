#ifndef RLAB_LATTICE_HPP
#define RLAB_LATTICE_HPP

// Nested cube system over an atomic measure, in the style of measure-adapted
// dyadic lattices: per level k a partition of the atoms into "cubes" centered
// at atom positions, with controlled separation, nesting, per-cube geometry,
// discrete densities, Poisson-type ancestor sums and the hd^k machinery.
//
// Construction is a concrete deterministic greedy net (per parent, ordered by
// decreasing local mass with index tie-break), so identical inputs give
// identical lattices.

#include <iosfwd>

#include "rlab/measure.hpp"

namespace rlab {

struct LatticeParams {
    int a0 = 4;          // scale ratio between consecutive levels (>= 2)
    double c0 = 1.0;     // lattice constant (>= 1); ell(Q) = 56*c0*scale_k
    int k_max = 8;       // deepest level relative to the root at level 0
    double gamma = 0.9;  // boundary-decay exponent used in reports
    bool split_to_atoms = false;  // extend levels until every leaf is a single
                                  // position cluster (capped)
};

struct Cube {
    int id = -1;
    int level = 0;        // root is level 0; scale_k = base_scale * a0^-k
    int parent = -1;
    std::vector<int> children;
    int center_atom = -1;  // x_Q is an atom position
    double r = 0;          // ball B(Q) radius; r = scale_k / 2
    double ell = 0;        // side length 56 * c0 * scale_k
    double mass = 0;       // mu(Q) = sum of member weights
    double mass_2bq = 0;   // mu(2 B_Q) = mu(B(x_Q, 56 r))
    double theta = 0;      // discrete density bucket value A0^(kn)
    int theta_k = 0;       // bucket index: theta = A0^(theta_k * n)
    double p_coeff = 0;    // Poisson-type ancestor sum P(Q)
    bool doubling = false;       // mu(100 B(Q)) <= C0 mu(B(Q))
    bool p_doubling = false;     // P(Q) <= 4 A0^n mu(2B_Q)/ell^n
    std::vector<int> atoms;      // member atom indices (sorted)
    double bbox_lo[kMaxDim];
    double bbox_hi[kMaxDim];
};

class Lattice {
public:
    Lattice(const AtomicMeasure& mu, LatticeParams params);

    const AtomicMeasure& measure() const { return *mu_; }
    const LatticeParams& params() const { return params_; }
    int levels() const { return static_cast<int>(by_level_.size()); }
    double scale(int level) const { return base_scale_ * std::pow(params_.a0, -level); }
    double base_scale() const { return base_scale_; }

    int cube_count() const { return static_cast<int>(cubes_.size()); }
    const Cube& cube(int id) const { return cubes_[static_cast<size_t>(id)]; }
    const std::vector<int>& level_cubes(int level) const { return by_level_[static_cast<size_t>(level)]; }
    int root() const { return 0; }
    int leaf_of_atom(int atom) const { return leaf_of_atom_[static_cast<size_t>(atom)]; }

    // Cube of the given level containing the atom.
    int ancestor_at_level(int atom, int level) const;
    bool contains(int ancestor, int descendant) const;

    // min over member atoms of |x - atom| (0 if x is a member position).
    double dist_point_to_cube(const double* x, int cube_id) const;
    double dist_cube_to_cube(int a, int b) const;
    // bbox lower bound for the point-to-cube distance (cheap prefilter).
    double dist_point_to_cube_lb(const double* x, int cube_id) const;
    // exact test dist_point_to_cube(x, cube) <= thresh with the bbox early-out.
    bool cube_within(const double* x, int cube_id, double thresh) const;

    // lambdaQ: ids of same-generation cubes P with dist(x_Q, P) <= lambda*ell(Q).
    std::vector<int> lambda_region(int cube_id, double lambda) const;
    // D_mu(lambdaQ): cubes P inside the region with ell(P) <= ell(Q),
    // i.e. the region cubes and all their descendants.
    std::vector<int> descendants_of_region(const std::vector<int>& region) const;
    double region_mass(const std::vector<int>& region) const;

    // Atom set of a region (sorted, deduplicated).
    std::vector<int> region_atoms(const std::vector<int>& region) const;

    // Boundary-collar statistic: mu(collar of width lambda*ell(Q)) / mu(3.5 B_Q).
    double small_boundary_stat(int cube_id, double lambda) const;

    // hd^k(Q): maximal cubes P (whole lattice) with ell(P) < ell(Q) and
    // Theta(P) >= A0^{kn} Theta(Q); bucket arithmetic makes the test exact.
    // k = 0 is allowed (used by the energy layer sums).
    std::vector<int> hd_family(int cube_id, int k) const;
    // hd^k(Q) restricted to cubes contained in the 9Q-style region.
    std::vector<int> hd_in_region(int cube_id, int k, double lambda) const;

    // m_k(Q): max ell(P)/ell(Q) over hd^k(Q) n D_mu(9Q), 0 if empty.
    double m_k(int cube_id, int k) const;

    // Chain-decay report for runs of consecutive non-doubling cubes
    // (theta_mu(100B(Q)) vs A0^{-9d...} theta_mu(100B(R))): empirical constant.
    struct ChainDecayReport {
        int chains = 0;
        double max_ratio = 0;  // max over chains of lhs/rhs with unit constant
    };
    ChainDecayReport chain_decay_report() const;

    // JSON-lines dump, one cube per line, stable field order.
    void dump_jsonl(std::ostream& os) const;
    uint64_t hash() const;

private:
    void build();
    void finalize_cube_geometry(Cube& q);

    const AtomicMeasure* mu_;
    LatticeParams params_;
    double base_scale_ = 1.0;
    std::vector<Cube> cubes_;
    std::vector<std::vector<int>> by_level_;
    std::vector<int> leaf_of_atom_;
};

// Literal predicates from the lattice axioms (also cached as cube flags).
bool is_doubling(const Lattice& lat, int cube_id);
bool is_p_doubling(const Lattice& lat, int cube_id);
double p_coeff(const Lattice& lat, int cube_id);
double theta_disc(const Lattice& lat, int cube_id);

}  // namespace rlab

#endif
