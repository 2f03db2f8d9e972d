#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "eloss/error.hpp"

namespace eloss {

enum class LossKind { exponential, power, custom };

/// Loss function Psi and its duality companions Phi = Psi^{-1}, Phi', I = (Phi')^{-1}.
/// Image of Psi is taken as (-inf, 0) for the built-in kinds.
struct LossModel {
    LossKind kind = LossKind::exponential;
    double eta = 1.0;    ///< exponential risk aversion
    double beta = 1.0;   ///< power exponent
    double kappa = 1.0;  ///< power shift: Psi(r) = -(r+kappa)^{-beta} on r > -kappa

    // custom kind only; dI may be left empty (central difference is used then)
    std::function<double(double)> psi_fn, phi_fn, dphi_fn, inv_dphi_fn, d_inv_dphi_fn;
    double image_lo = -std::numeric_limits<double>::infinity();
    double image_hi = 0.0;

    static LossModel exponential(double eta) {
        LossModel m;
        m.kind = LossKind::exponential;
        m.eta = eta;
        m.validate();
        return m;
    }
    static LossModel power(double beta, double kappa) {
        LossModel m;
        m.kind = LossKind::power;
        m.beta = beta;
        m.kappa = kappa;
        m.validate();
        return m;
    }

    void validate() const {
        switch (kind) {
            case LossKind::exponential:
                require(eta > 0.0 && std::isfinite(eta), ErrorKind::invalid_argument, "loss: eta must be > 0");
                break;
            case LossKind::power:
                require(beta > 0.0 && std::isfinite(beta), ErrorKind::invalid_argument, "loss: beta must be > 0");
                require(kappa > 0.0 && std::isfinite(kappa), ErrorKind::invalid_argument, "loss: kappa must be > 0");
                break;
            case LossKind::custom:
                require(psi_fn && phi_fn && dphi_fn && inv_dphi_fn, ErrorKind::invalid_argument,
                        "loss: custom model needs Psi, Phi, Phi' and I");
                require(image_lo < image_hi, ErrorKind::invalid_argument, "loss: empty image interval");
                break;
        }
    }

    bool in_image(double p) const { return p > image_lo && p < image_hi; }

    /// Psi(r); -inf outside the power domain.
    double psi(double r) const {
        switch (kind) {
            case LossKind::exponential: return -std::exp(-eta * r);
            case LossKind::power:
                if (r + kappa <= 0.0) return -std::numeric_limits<double>::infinity();
                return -std::pow(r + kappa, -beta);
            case LossKind::custom: return psi_fn(r);
        }
        return 0.0;
    }

    /// Psi'(r).
    double dpsi(double r) const {
        switch (kind) {
            case LossKind::exponential: return eta * std::exp(-eta * r);
            case LossKind::power:
                if (r + kappa <= 0.0) return std::numeric_limits<double>::infinity();
                return beta * std::pow(r + kappa, -beta - 1.0);
            case LossKind::custom: return 1.0 / dphi_fn(psi_fn(r));
        }
        return 0.0;
    }

    double phi(double p) const {
        switch (kind) {
            case LossKind::exponential: return -std::log(-p) / eta;
            case LossKind::power: return std::pow(-p, -1.0 / beta) - kappa;
            case LossKind::custom: return phi_fn(p);
        }
        return 0.0;
    }

    double dphi(double p) const {
        switch (kind) {
            case LossKind::exponential: return -1.0 / (eta * p);
            case LossKind::power: return std::pow(-p, -1.0 / beta - 1.0) / beta;
            case LossKind::custom: return dphi_fn(p);
        }
        return 0.0;
    }

    /// I(y) for y > 0, increasing.
    double inv_dphi(double y) const {
        switch (kind) {
            case LossKind::exponential: return -1.0 / (eta * y);
            case LossKind::power: return -std::pow(beta * y, -beta / (1.0 + beta));
            case LossKind::custom: return inv_dphi_fn(y);
        }
        return 0.0;
    }

    double d_inv_dphi(double y) const {
        switch (kind) {
            case LossKind::exponential: return 1.0 / (eta * y * y);
            case LossKind::power:
                return beta * beta / (1.0 + beta) * std::pow(beta * y, -(1.0 + 2.0 * beta) / (1.0 + beta));
            case LossKind::custom: {
                if (d_inv_dphi_fn) return d_inv_dphi_fn(y);
                const double h = 1e-5 * y;
                return (inv_dphi_fn(y + h) - inv_dphi_fn(y - h)) / (2.0 * h);
            }
        }
        return 0.0;
    }

    std::string name() const {
        switch (kind) {
            case LossKind::exponential: return "exponential";
            case LossKind::power: return "power";
            case LossKind::custom: return "custom";
        }
        return "";
    }
};

}  // namespace eloss
