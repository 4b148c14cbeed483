#ifndef RLAB_CORONA_HPP
#define RLAB_CORONA_HPP

// Stopping-time corona machinery over the lattice: the dominated-from-below
// classification, the good dominating family, stopping families and enlarged
// regions, tree construction with Neg/End/M_Neg bookkeeping, tractable and
// typical tests, generation iteration, layer selection, Whitney-style
// regularized cubes with the smoothed measure eta, and the transference
// diagnostics with the final dichotomy probe.

#include <map>
#include <optional>

#include "rlab/functionals.hpp"
#include "rlab/riesz.hpp"

namespace rlab {

// ---------------------------------------------------------------------------
// Constant tower. The paper profile computes everything from (A0, n, k0);
// the desk profile keeps the same structure with directly exercisable values
// (the formula values underflow at desk scale). Derived values are always
// recomputed, never stored inconsistently.
// ---------------------------------------------------------------------------
struct StoppingConfig {
    enum class Profile { desk, paper };
    Profile profile = Profile::desk;

    int n = 1;   // codimension-1 dimension
    int a0 = 4;  // lattice ratio

    int k0 = 1;               // M0 = A0^(k0 n)
    double m0 = 4;            // A0^(k0 n)
    double k_lambda_exact = 1;  // (8n-1)/(8n-2) * k0
    int k_lambda = 1;         // integer hd-layer index used for HD(R)
    bool k_lambda_rounded = false;
    double lambda_cap = 4;    // "Lambda": A0^(k_lambda_exact * n) in paper profile
    double lambda0 = 1.0 / 16;  // small-side threshold for NDB
    double delta0 = 1.0 / 16;   // low-density threshold
    double b_const = 2;       // "B": tractability budget
    double eps_z = 1e-3;      // Z-mass threshold
    double p0 = 2 - 1.0 / 18; // 2 - 1/(18n)
    double ell0 = 0;          // regularization floor; 0 -> 2 r_atom at use

    // unspecified-constant knobs (default 1)
    double c0_small = 1;  // lambda0 = c0_small / Lambda^4 (paper profile)
    double c_prime = 1;   // delta0 <= c_prime Lambda^(1-4n)
    double c1 = 1;        // Neg side-length constant
    double c2 = 1;        // eta lower-bound constant
    double cc1 = 1;       // m_k report constant
    double cc2 = 1;       // overlap bound constant
    double eps_n = 1;     // transference exponent (upper bound 1/(32(8n-1)^2))

    static StoppingConfig desk(int n, int a0);
    static StoppingConfig paper(int n, int a0, int k0, double c0_small = 1, double c_prime = 1);
};

// ---------------------------------------------------------------------------
// Global classification context: DB cubes with their M(Q), cached E_inf(9Q)
// and mu(9Q). Built once per (lattice, config).
// ---------------------------------------------------------------------------
class CoronaContext {
public:
    CoronaContext(const Lattice& lat, StoppingConfig cfg);

    const Lattice& lattice() const { return *lat_; }
    const StoppingConfig& config() const { return cfg_; }

    bool in_db(int cube_id) const { return in_db_[static_cast<size_t>(cube_id)] != 0; }
    const std::vector<int>& db_cubes() const { return db_; }
    double m_of(int cube_id) const { return m_of_[static_cast<size_t>(cube_id)]; }
    double einf9(int cube_id) const { return einf9_[static_cast<size_t>(cube_id)]; }
    double mass9(int cube_id) const { return mass9_[static_cast<size_t>(cube_id)]; }

    // sigma over a cube-id set
    double sigma_set(const std::vector<int>& ids, double p = 2.0) const {
        return sigma(*lat_, ids, p);
    }
    double sigma_one(int cube_id, double p = 2.0) const { return sigma_set({cube_id}, p); }

    // DB(M) membership test (Q must be P-doubling).
    bool dominated_from_below(int cube_id, double m) const;

private:
    const Lattice* lat_;
    StoppingConfig cfg_;
    std::vector<char> in_db_;
    std::vector<int> db_;
    std::vector<double> m_of_;
    std::vector<double> einf9_;
    std::vector<double> mass9_;
};

// Minimal k >= 1 whose hd^k(Q) n D(9Q) layer exceeds M^2 Theta(Q)^2 mu(9Q);
// throws if Q is not dominated at level M.
int k_qm(const CoronaContext& ctx, int cube_id, double m);

// ---------------------------------------------------------------------------
// G/B split of hd^{k(Q,M)-k_Lambda}(Q) n D(9Q) and the big_lambda families.
// ---------------------------------------------------------------------------
struct GFamily {
    int q = -1;
    double m = 0;
    int k_qm = 0;
    int k_s = 0;  // k(Q,M) - k_lambda clamped to >= 0 (clamp flagged)
    bool k_clamped = false;
    std::vector<int> g, b;                      // the split
    std::map<int, std::vector<int>> big_of_s;   // S -> big_lambda0(S) = I_S
    std::map<int, char> cond_theta_exact;       // S -> all members have Theta = Lambda Theta(S)
    std::map<int, double> sigma_is;             // S -> sigma(I_S)
};
GFamily g_family(const CoronaContext& ctx, int cube_id, double m);

// GDF: P-doubling cubes S in G(Q, M(Q)) for some DB cube Q.
std::vector<int> gdf_family(const CoronaContext& ctx);

// ---------------------------------------------------------------------------
// Stopping families for a root R.
// ---------------------------------------------------------------------------
struct StoppingFamilies {
    std::vector<int> hd, ld, ndb, bad, stop;
};
StoppingFamilies stopping_families(const CoronaContext& ctx, int root);

// Enlarged region e_j(R): R plus the next-generation cubes Q with
// dist(x_R, Q) < l(R)/2 + 2 j l(Q).
struct EnlargedRegion {
    int j = 0;
    std::vector<int> cubes;       // R and the accepted next-generation cubes
    std::vector<int> atoms;       // sorted union of members
    std::vector<char> atom_mask;  // over all atoms
    Ball ball;                    // B(e_j(R)) = B(x_R, (1/2 + 2j/A0) l(R))
};
EnlargedRegion enlarged_region(const CoronaContext& ctx, int root, int j);

// Minimal j in [10, max(10, A0/4)] with the B^(1/4) energy-decrement test;
// at desk constants the window may contain no qualifying j, in which case the
// argmin of the ratio is returned and flagged.
struct HSelection {
    int h = 0;
    int j = 10;
    bool lemma_miss = false;
    double ratio = 0;  // achieved sigma ratio at the selected j
};
HSelection select_h(const CoronaContext& ctx, int root);

bool is_mdw(const CoronaContext& ctx, int root);

// ---------------------------------------------------------------------------
// The corona tree of a root R.
// ---------------------------------------------------------------------------
struct CoronaTree {
    int root = -1;
    bool mdw = false;
    bool forced = false;  // built although R fails the MDW test
    HSelection h_sel;

    StoppingFamilies fam;               // HD/LD/NDB/Bad/Stop of R
    EnlargedRegion e, e1, e2;           // e(R), e'(R), e''(R)

    std::vector<int> stop_e1;           // Stop(e'(R))
    std::vector<int> hd1_r;             // HD_1(R)
    std::vector<int> hd1_e;             // HD_1(e(R))
    std::vector<int> hd1_e1;            // HD_1(e'(R))
    std::vector<int> hd2_e1;            // HD_2(e'(R))
    std::vector<int> stop2;             // Stop_2(e'(R))
    std::map<int, StoppingFamilies> hd1_sub;  // per HD_1(e'(R)) cube: its families

    std::vector<int> t_stop;            // T_Stop(e'(R))
    std::vector<int> neg;               // Neg(e'(R))
    std::vector<int> end;               // End(e'(R))
    std::vector<int> t_tree;            // T(e'(R))

    std::vector<int> reg;               // Reg(e'(R))
    double ell0_used = 0;
    bool ell0_clamped = false;
    std::vector<int> t_reg;             // T_Reg(e'(R))
    std::vector<int> m_neg;             // M_Neg
    std::vector<int> end_tilde;         // (End \ Neg) u M_Neg
    std::vector<int> t_tilde;           // cubes of T_Reg not strictly inside End~

    std::vector<int> z_atoms;           // e'(R) \ union(End)
    std::vector<int> z_tilde_atoms;     // e'(R) \ union(End~)

    bool tractable = false;
    bool typical = false;

    double sigma_r = 0;                 // Theta(R)^2 mu(R)
    double sigma_hd1_r = 0, sigma_hd1_e = 0, sigma_hd1_e1 = 0, sigma_hd2 = 0;

    void serialize(std::ostream& os) const;
    uint64_t hash() const;
};

// Build depth: `families` populates the stopping families, regions, sigma
// values and the tractability flag (enough for the selection loops);
// `trees` adds T_Stop/Neg/End/T and Z with the typicality flag; `full` adds
// the Whitney stage (Reg, T_Reg, M_Neg, End~, T~, Z~) that the eta and
// transference consumers need.
enum class TreeStage { families, trees, full };
CoronaTree build_tree(const CoronaContext& ctx, int root, bool force = false,
                      TreeStage stage = TreeStage::full);

// d_R(x) = inf over tree cubes of (dist(x, Q) + l(Q)); 1-Lipschitz. The
// regularized cover is derived from max(ell0, d_R).
double tree_distance(const CoronaContext& ctx, const CoronaTree& tree, const double* x);

bool is_tractable(const CoronaTree& tree);

// Typical-tree test: sum of E_inf(9P) over DB cubes P near the tree versus
// Lambda^(-1/(3n)) sigma(HD_1(e(R))). Returns the flag and both sides.
struct TypicalResult {
    bool typical = false;
    double lhs = 0, rhs = 0;
    std::vector<int> near_db;
};
TypicalResult typical_test(const CoronaContext& ctx, const CoronaTree& tree);

// ---------------------------------------------------------------------------
// GH selection and the generation iteration.
// ---------------------------------------------------------------------------
struct GhResult {
    std::vector<int> selected;
    bool prop_c_holds = false;
    double prop_c_constant = 0;  // sigma(HD2(e'(R))) / (B^(1/4) sum sigma(HD1(e(Q))))
};
GhResult gh_family(const CoronaContext& ctx, const CoronaTree& tree);

struct GenIteration {
    std::vector<std::vector<int>> gen;   // Gen_j(R)
    std::vector<std::vector<int>> trc;   // Trc_j(R)
    bool depth_capped = false;
    bool containment_ok = false;         // union of Gen u Trc inside B(e''(R))
    double decomposition_slack = 0;      // rhs/lhs of the layered bound (0 if lhs 0)
};
GenIteration gen_iteration(const CoronaContext& ctx, int root, int depth_cap = 8);

// ---------------------------------------------------------------------------
// Layers F_j^h and the selected subfamilies L_j^h.
// ---------------------------------------------------------------------------
struct Layers {
    // (j, h) -> cubes; j is the Theta bucket index, h >= 1 the peeling depth
    std::map<std::pair<int, int>, std::vector<int>> f;
    std::map<std::pair<int, int>, std::vector<int>> l;
    int m0_emp = 1;  // greedy disjoint-subfamily count actually used
    bool prop_i_ok = true, prop_ii_ok = true;
    double prop_iii_constant = 0;  // max over (j,h) of lhs/rhs in (iii) with m0_emp
};
Layers build_layers(const CoronaContext& ctx);

// Exactly counted tree overlap: for each (P, k), the number of selected
// roots R whose k-th tractable generation owns a tree containing P.
struct OverlapReport {
    int max_overlap = 0;
    double bound = 0;  // C2 (log Lambda)^2
    bool within_bound = true;
};
OverlapReport overlap_report(const CoronaContext& ctx, const Layers& layers, int depth_cap = 6);

// ---------------------------------------------------------------------------
// Regularized cubes and the smoothed measure eta.
// ---------------------------------------------------------------------------
struct EtaMeasure {
    std::vector<int> reg_cubes;
    std::vector<double> cube_mass;       // mu(Q) per reg cube
    int m_quad = 0;
    std::optional<AtomicMeasure> atoms;  // quadrature atoms (weights sum to mass)
};
EtaMeasure eta_measure(const CoronaContext& ctx, const CoronaTree& tree, int m_quad);

Vec riesz_eta(const EtaMeasure& eta, const Vec& x);

// ---------------------------------------------------------------------------
// Transference diagnostics (the computable side of the Haar-coefficient
// transfer): localized fields, Q_Reg coefficients, Sigma_p sums over the
// End~ splitting, and the dichotomy probe.
// ---------------------------------------------------------------------------
double q_reg_coeff(const CoronaContext& ctx, const CoronaTree& tree, int cube_id);

struct TransferenceDiagnostics {
    // per-atom localized fields over e'(R) atoms (indexed by atom id)
    std::map<int, Vec> r_treg;    // R_{T_Reg} mu
    std::map<int, Vec> r_ttilde;  // R_{T~} mu
    std::map<int, double> delta_ttilde;  // |Delta_{T~} R mu| per atom (vs m_{mu,2R})

    double mean_zero_residual = 0;  // with the mean over union(End~) u Z subtracted
    double delta_l2 = 0;            // || Delta_{T~} R mu ||_{L2(mu)}^2

    // End~ splitting sums
    std::map<std::string, std::vector<int>> split;  // ld1/ndb1/ld2/ndb2/hd2/mneg
    std::map<std::string, double> sigma_p_pot;      // Sigma_p^P per family
    std::map<std::string, double> sigma_p_qreg;     // Sigma_p^Q per family
    std::map<std::string, double> poisson_bound_const;  // empirical per-family P(Q) bound constants
};
TransferenceDiagnostics transference_diagnostics(const CoronaContext& ctx, const CoronaTree& tree,
                                                 const std::vector<Vec>& pv_field, double p);

struct DichotomyProbe {
    double z_mass = 0, z_threshold = 0;
    double delta_l2 = 0, delta_threshold = 0;
    bool alt_a = false, alt_b = false;
    bool miss = false;  // neither alternative holds
};
DichotomyProbe dichotomy_probe(const CoronaContext& ctx, const CoronaTree& tree,
                               const std::vector<Vec>& pv_field);

}  // namespace rlab

#endif
