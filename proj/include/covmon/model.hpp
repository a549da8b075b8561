#pragma once

#include <Eigen/Dense>

#include <array>
#include <string_view>

namespace covmon {

/// Compartment indices of the 8-dimensional state [I, A, E, phi, H, W, D, R].
enum Compartment : int { kI = 0, kA, kE, kPhi, kH, kW, kD, kR };

inline constexpr int kStateDim = 8;
inline constexpr int kObsDim = 3;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using ObsVector = Eigen::Matrix<double, kObsDim, 1>;
using ObsMatrix = Eigen::Matrix<double, kObsDim, kObsDim>;

inline constexpr std::array<std::string_view, kStateDim> kCompartmentNames = {"I", "A", "E", "phi",
                                                                              "H", "W", "D", "R"};

inline constexpr double kHospMort = 0.1322;
inline constexpr double kSirMort = 0.2129;

/// Static model parameters. Rates are per day; tau_half is in days.
struct ParameterVector {
    static constexpr int kNumInferred = 10;
    static constexpr std::array<std::string_view, kNumInferred> kNames = {
        "sigma", "gamma_I", "gamma_H", "gamma_W", "E2I", "IC_HOSP", "HOSP", "theta_E", "theta_A", "tau_half"};

    double sigma = 1.0 / 6.2;
    double gamma_i = 1.0 / 7.0;
    double gamma_h = 1.0 / 8.9;
    double gamma_w = 1.0 / 12.2;
    double e2i = 0.75;
    double ic_hosp = 0.18;
    double hosp = 0.033;
    double theta_e_star = 1.0;
    double theta_a_star = 1.0;
    double tau_half = 6.5 / 24.0;

    // not inferred
    double a2i = 0.0;
    double hosp_mort = kHospMort;
    double sir_mort = kSirMort;

    double gamma_a() const { return gamma_i; }
    double rho() const;

    /// Throws InfeasibleParameters if a rate is nonpositive or a fraction leaves [0, 1].
    void validate() const;

    std::array<double, kNumInferred> inferred() const;
    static ParameterVector from_inferred(const std::array<double, kNumInferred>& values);
};

struct FractionSet {
    double f0 = 0; ///< E -> I
    double f1 = 0; ///< A -> I
    double f2 = 0; ///< I -> H
    double f2d = 0; ///< I -> D
    double f3 = 0; ///< H -> W
    double f3d = 0; ///< H -> D
    double f4 = 0; ///< W -> D

    void validate() const;
};

/// Fractions for a parameter point and an infection fatality rate; the I -> D share
/// is chosen so that the overall death risk per exposure matches `ifr`.
FractionSet derive_fractions(const ParameterVector& p, double ifr);

/// Daily transition matrix of the linear state-space model at infection rate `beta`.
StateMatrix build_transition_matrix(const ParameterVector& p, const FractionSet& f, double beta);

/// Next-generation reproduction number for a given beta (phi not a state-at-infection).
double r0_from_beta(const ParameterVector& p, const FractionSet& f, double beta);
double beta_from_r0(const ParameterVector& p, const FractionSet& f, double r0);

/// Reproduction number when phi is read as a state-at-infection.
double r0_phi(double r0);

/// Probability of eventual death for an individual currently in I, H or W.
double cfr(const FractionSet& f, Compartment compartment);

} // namespace covmon
