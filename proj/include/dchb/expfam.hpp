#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace dchb {

enum class Family { gaussian, bernoulli, poisson };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::gaussian: return "gaussian";
        case Family::bernoulli: return "bernoulli";
        case Family::poisson: return "poisson";
    }
    return "?";
}

struct Interval {
    double lo;
    double hi;
    bool lo_closed;
    bool hi_closed;

    bool contains(double x) const {
        if (x < lo || x > hi) return false;
        if (x == lo && !lo_closed) return false;
        if (x == hi && !hi_closed) return false;
        return true;
    }
    bool strictly_interior(double x) const { return x > lo && x < hi; }
};

// One member of the canonical family f(y|theta,phi) =
// exp[phi^{-1}{y theta - psi(theta)} + rho(y,phi)].
// For the three built-in members theta ranges over all of R.
struct ExpFamModel {
    Family family;
    // dispersion phi; engaged when known, empty when treated as unknown
    std::optional<double> dispersion;

    double phi() const {
        if (!dispersion) throw std::logic_error("dispersion is unknown for this model");
        return *dispersion;
    }

    double psi(double theta) const {
        switch (family) {
            case Family::gaussian: return 0.5 * theta * theta;
            case Family::bernoulli:
                // log(1+e^t), overflow-safe
                return theta > 0 ? theta + std::log1p(std::exp(-theta))
                                 : std::log1p(std::exp(theta));
            case Family::poisson: return std::exp(theta);
        }
        return 0.0;
    }

    double psi_prime(double theta) const {
        switch (family) {
            case Family::gaussian: return theta;
            case Family::bernoulli: return 1.0 / (1.0 + std::exp(-theta));
            case Family::poisson: return std::exp(theta);
        }
        return 0.0;
    }

    double psi_double_prime(double theta) const {
        switch (family) {
            case Family::gaussian: return 1.0;
            case Family::bernoulli: {
                double p = psi_prime(theta);
                return p * (1.0 - p);
            }
            case Family::poisson: return std::exp(theta);
        }
        return 0.0;
    }

    // carrier term rho(y,phi); carried for density normalization checks only
    double rho(double y, double phi_v) const {
        switch (family) {
            case Family::gaussian:
                return -0.5 * y * y / phi_v - 0.5 * std::log(6.283185307179586477 * phi_v);
            case Family::bernoulli: return 0.0;
            case Family::poisson: return -std::lgamma(y + 1.0);
        }
        return 0.0;
    }

    Interval natural_domain() const {
        const double inf = std::numeric_limits<double>::infinity();
        return {-inf, inf, false, false};
    }

    Interval mean_range() const {
        const double inf = std::numeric_limits<double>::infinity();
        switch (family) {
            case Family::gaussian: return {-inf, inf, false, false};
            case Family::bernoulli: return {0.0, 1.0, true, true};
            case Family::poisson: return {0.0, inf, true, false};
        }
        return {-inf, inf, false, false};
    }

    // inverse of psi_prime on the interior of the mean range; used to seed
    // mode searches
    double theta_at_mean(double mu) const {
        switch (family) {
            case Family::gaussian: return mu;
            case Family::bernoulli: return std::log(mu / (1.0 - mu));
            case Family::poisson: return std::log(mu);
        }
        return mu;
    }

    static ExpFamModel gaussian(double sigma2 = 1.0) {
        if (sigma2 <= 0) throw std::invalid_argument("sigma2 must be positive");
        return {Family::gaussian, sigma2};
    }
    static ExpFamModel bernoulli() { return {Family::bernoulli, 1.0}; }
    static ExpFamModel poisson() { return {Family::poisson, 1.0}; }
};

// Strictly increasing transform h putting theta on the scale of the normal
// prior h(theta) = beta + u.  Canonical choice is the identity.
struct LinkSpec {
    std::function<double(double)> h;
    std::function<double(double)> h_prime;

    static LinkSpec identity() {
        return {[](double t) { return t; }, [](double) { return 1.0; }};
    }
};

enum class DispersionPrior { known, flat_on_precision };

// Hyperparameters of the prior layers: h(theta) = beta + u, u ~ N(0, 1/r),
// and when r itself is unknown, r ~ G(a,b).  r = 0 encodes the improper
// flat prior on h(theta).
struct PriorSpec {
    double beta = 0.0;
    double r = 0.0;
    double a = 1.0;
    double b = 1.0;
    DispersionPrior dispersion_prior = DispersionPrior::known;

    void validate() const {
        if (r < 0) throw std::invalid_argument("r must be >= 0");
        if (a <= 0 || b <= 0) throw std::invalid_argument("a and b must be positive");
    }
};

inline Interval mean_range(const ExpFamModel& model) { return model.mean_range(); }

// log of the unnormalized density of T_n: (n/phi)(ybar*theta - psi(theta)).
// Defined up to theta-independent additive constants.
inline double log_kernel(const ExpFamModel& model, int n, double ybar, double theta) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (!model.mean_range().contains(ybar))
        throw std::domain_error(std::string("ybar outside mean range of ") +
                                family_name(model.family));
    return static_cast<double>(n) / model.phi() * (ybar * theta - model.psi(theta));
}

}  // namespace dchb
