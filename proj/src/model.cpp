#include "covmon/model.hpp"
#include "covmon/errors.hpp"

#include <cmath>
#include <string>

namespace covmon {

namespace {

void require_rate(double v, std::string_view name)
{
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw InfeasibleParameters("rate " + std::string(name) + " must be positive, got " + std::to_string(v));
    }
}

void require_fraction(double v, std::string_view name)
{
    if (!(v >= 0.0 && v <= 1.0)) {
        throw InfeasibleParameters("fraction " + std::string(name) + " must lie in [0,1], got " + std::to_string(v));
    }
}

} // namespace

double ParameterVector::rho() const
{
    return std::log(2.0) / tau_half;
}

void ParameterVector::validate() const
{
    require_rate(sigma, "sigma");
    require_rate(gamma_i, "gamma_I");
    require_rate(gamma_h, "gamma_H");
    require_rate(gamma_w, "gamma_W");
    require_rate(tau_half, "tau_half");
    require_fraction(e2i, "E2I");
    require_fraction(a2i, "A2I");
    require_fraction(hosp, "HOSP");
    require_fraction(ic_hosp, "IC_HOSP");
    require_fraction(hosp_mort, "HOSP_MORT");
    require_fraction(sir_mort, "SIR_MORT");
    if (!(theta_e_star >= 0.0) || !(theta_a_star >= 0.0)) {
        throw InfeasibleParameters("shedding scalings must be nonnegative");
    }
}

std::array<double, ParameterVector::kNumInferred> ParameterVector::inferred() const
{
    return {sigma, gamma_i, gamma_h, gamma_w, e2i, ic_hosp, hosp, theta_e_star, theta_a_star, tau_half};
}

ParameterVector ParameterVector::from_inferred(const std::array<double, kNumInferred>& v)
{
    ParameterVector p;
    p.sigma = v[0];
    p.gamma_i = v[1];
    p.gamma_h = v[2];
    p.gamma_w = v[3];
    p.e2i = v[4];
    p.ic_hosp = v[5];
    p.hosp = v[6];
    p.theta_e_star = v[7];
    p.theta_a_star = v[8];
    p.tau_half = v[9];
    return p;
}

void FractionSet::validate() const
{
    require_fraction(f0, "F0");
    require_fraction(f1, "F1");
    require_fraction(f2, "F2");
    require_fraction(f2d, "F2d");
    require_fraction(f3, "F3");
    require_fraction(f3d, "F3d");
    require_fraction(f4, "F4");
    if (1.0 - f2 - f2d < 0.0) {
        throw InfeasibleParameters("negative recovery fraction out of I (F2 + F2d > 1)");
    }
    if (1.0 - f3 - f3d < 0.0) {
        throw InfeasibleParameters("negative recovery fraction out of H (F3 + F3d > 1)");
    }
}

FractionSet derive_fractions(const ParameterVector& p, double ifr)
{
    p.validate();
    require_fraction(ifr, "IFR");
    if (p.e2i <= 0.0) {
        throw InfeasibleParameters("E2I must be positive to attribute the IFR");
    }
    FractionSet f;
    f.f0 = p.e2i;
    f.f1 = p.a2i;
    f.f2 = p.hosp;
    f.f3 = p.ic_hosp;
    f.f3d = p.sir_mort * p.hosp_mort;
    f.f4 = p.sir_mort;
    // deaths per symptomatic case routed through hospital care; the H <-> W loop is a geometric series
    const double loop = 1.0 - p.ic_hosp * (1.0 - p.sir_mort);
    const double hospital_deaths = (p.hosp_mort + p.ic_hosp) * p.sir_mort * p.hosp / loop;
    f.f2d = std::max(0.0, ifr / p.e2i - hospital_deaths);
    f.validate();
    return f;
}

StateMatrix build_transition_matrix(const ParameterVector& p, const FractionSet& f, double beta)
{
    const double decay = std::exp(-p.rho());
    const double shed = 1.0 - decay;
    const double gi = p.gamma_i;
    const double ga = p.gamma_a();
    const double gh = p.gamma_h;
    const double gw = p.gamma_w;

    StateMatrix F = StateMatrix::Zero();
    F(kI, kI) = 1.0 - gi;
    F(kI, kA) = ga * f.f1;
    F(kI, kE) = p.sigma * f.f0;

    F(kA, kA) = 1.0 - ga;
    F(kA, kE) = p.sigma * (1.0 - f.f0);

    F(kE, kE) = 1.0 - p.sigma;
    F(kE, kPhi) = beta;

    F(kPhi, kI) = shed;
    F(kPhi, kA) = p.theta_a_star * shed;
    F(kPhi, kE) = p.theta_e_star * shed;
    F(kPhi, kPhi) = decay;

    F(kH, kI) = gi * f.f2;
    F(kH, kH) = 1.0 - gh;
    F(kH, kW) = gw * (1.0 - f.f4);

    F(kW, kH) = gh * f.f3;
    F(kW, kW) = 1.0 - gw;

    F(kD, kI) = gi * f.f2d;
    F(kD, kH) = gh * f.f3d;
    F(kD, kW) = gw * f.f4;
    F(kD, kD) = 1.0;

    F(kR, kI) = gi * (1.0 - f.f2 - f.f2d);
    F(kR, kA) = ga * (1.0 - f.f1);
    F(kR, kH) = gh * (1.0 - f.f3 - f.f3d);
    F(kR, kR) = 1.0;
    return F;
}

namespace {

double generation_weight(const ParameterVector& p, const FractionSet& f)
{
    return p.theta_e_star / p.sigma + (1.0 - f.f0) * p.theta_a_star / p.gamma_a()
           + (f.f0 + (1.0 - f.f0) * f.f1) / p.gamma_i;
}

} // namespace

double r0_from_beta(const ParameterVector& p, const FractionSet& f, double beta)
{
    return beta * generation_weight(p, f);
}

double beta_from_r0(const ParameterVector& p, const FractionSet& f, double r0)
{
    const double w = generation_weight(p, f);
    if (!(w > 0.0)) {
        throw InfeasibleParameters("infectious contribution is zero; beta undefined");
    }
    return r0 / w;
}

double r0_phi(double r0)
{
    if (r0 < 0.0) {
        throw InputError("reproduction number must be nonnegative");
    }
    return std::sqrt(r0);
}

double cfr(const FractionSet& f, Compartment compartment)
{
    // W returns to H with share 1 - F4, so H and W form a loop
    const double loop = f.f3 * (1.0 - f.f4);
    if (loop >= 1.0) {
        throw InfeasibleParameters("degenerate H <-> W loop (F3 (1 - F4) >= 1)");
    }
    const double p_h = (f.f3d + f.f3 * f.f4) / (1.0 - loop);
    const double p_w = f.f4 + (1.0 - f.f4) * p_h;
    switch (compartment) {
    case kI:
        return f.f2d + f.f2 * p_h;
    case kH:
        return p_h;
    case kW:
        return p_w;
    default:
        throw InputError("CFR is defined for I, H and W only");
    }
}

} // namespace covmon
