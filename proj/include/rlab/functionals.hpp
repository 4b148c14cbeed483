#ifndef RLAB_FUNCTIONALS_HPP
#define RLAB_FUNCTIONALS_HPP

// beta_2 flatness coefficients, densities, the multiscale Wolff-type
// energies, dyadic energy sums over the lattice, sigma sums, and the
// Jones-Wolff potential.

#include "rlab/lattice.hpp"
#include "rlab/measure.hpp"

namespace rlab {

struct ScaleGrid {
    double r_min = 0;
    double r_max = 0;
    double rho = M_SQRT2;  // geometric ratio between consecutive scales

    ScaleGrid() = default;
    ScaleGrid(double rmin, double rmax, double ratio = M_SQRT2)
        : r_min(rmin), r_max(rmax), rho(ratio) {
        if (!(r_min > 0) || !(r_min < r_max) || !(rho > 1))
            throw std::runtime_error("scale grid: need 0 < r_min < r_max, rho > 1");
    }
    double log_weight() const { return std::log(rho); }
    std::vector<double> scales() const {
        std::vector<double> out;
        for (double r = r_min; r <= r_max * (1 + 1e-12); r *= rho) out.push_back(r);
        return out;
    }
};

// Grid clamped to the measure's resolution (r_min >= r_atom).
ScaleGrid natural_grid(const AtomicMeasure& mu, double rho = M_SQRT2);

// theta_mu(B) = mu(B) / r(B)^n.
double theta(const AtomicMeasure& mu, const Ball& b);

// beta_2 via the weighted second-moment matrix: the optimal affine n-plane
// passes through the in-ball centroid and its normal is the smallest
// eigenvector, so beta_2(B)^2 = lambda_min(M) / r(B)^(n+2).
// Returns 0 when mu(B) = 0.
double beta2(const AtomicMeasure& mu, const Ball& b);

// beta2 and theta from one ball query (the inner loop of the energies).
struct BallStats {
    double mass = 0;
    double theta = 0;
    double beta2 = 0;
};
BallStats ball_stats(const AtomicMeasure& mu, const double* center, double radius);

// Multiscale beta-energy: sum_i w_i sum_s beta2(x_i,r_s)^2 theta(x_i,r_s) ln(rho).
double beta_wolff_energy(const AtomicMeasure& mu, const ScaleGrid& grid);

// Dyadic companion: sum over all cubes of beta2(2B_Q)^2 Theta(Q) mu(Q).
double dyadic_beta_energy(const Lattice& lat);

struct EnergyBreakdown {
    double total = 0;
    std::vector<std::pair<int, double>> contributions;  // (cube id, term)
    double exponent = 0;  // 3/4 or 1/2
    double lambda = 0;    // region dilation used
    int achieving_k = -1; // for the sup-type energy
};

// E(lambdaQ)     = sum_{P in D_mu(lambdaQ)} (l(P)/l(Q))^{3/4} Theta(P)^2 mu(P)
// E^H(lambdaQ)   = same sum restricted to the hd^k layers, k >= 0
// E_inf(lambdaQ) = sup_{k>=1} of the k-layer sum with exponent 1/2
EnergyBreakdown energy_E(const Lattice& lat, int cube_id, double lambda);
EnergyBreakdown energy_EH(const Lattice& lat, int cube_id, double lambda);
EnergyBreakdown energy_Einf(const Lattice& lat, int cube_id, double lambda);

// Single hd^k layer with exponent 1/2 (the building block of E_inf).
double energy_layer(const Lattice& lat, int cube_id, int k, double lambda);

// sigma_p(I) = sum_{P in I} Theta(P)^p mu(P); sigma = sigma_2.
double sigma(const Lattice& lat, const std::vector<int>& cubes, double p = 2.0);

// E(sigma)-style 3/8-shifted Wolff energy:
// sum_i w_i sum_s (mu(B(x_i,r_s)) / r_s^{n - 3/8})^2 ln(rho).
double wolff_38_energy(const AtomicMeasure& mu, const ScaleGrid& grid);

// U_mu(x) = sup_r theta(x,r) + ( sum_s beta2(x,r_s)^2 theta(x,r_s) ln rho )^{1/2}.
double jones_wolff_potential(const AtomicMeasure& mu, const double* x, const ScaleGrid& grid);

// Brute-force beta2 oracle: scans directions (10^4 by default) with the
// offset optimized analytically, then refines locally. Always an upper bound
// for the true infimum; used by tests and the acceptance suite.
double beta2_bruteforce(const AtomicMeasure& mu, const Ball& b, int directions = 10000,
                        int refine_rounds = 3);

void write_energy_csv(std::ostream& os, const EnergyBreakdown& e);

}  // namespace rlab

#endif
