#pragma once

#include "cindep/numerics.hpp"

#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cindep {

/// k(x,y) = sum_i exp(-|x-y|^2 / (2 sigma_i^2)). Not normalized by the number of radii.
struct MultiScaleGaussian {
    std::vector<double> radii;
};

/// k(x,y) = (1 + |x-y|^2 / sigma^2)^-1.
struct SquaredInverse {
    double sigma = 1.0;
};

/// k(x,y) = x.y
struct Linear {};

/// k(x,y) = (x.y)^2
struct Quadratic {};

/// Fixed kernel descriptor. Parameters never change after construction.
class KernelSpec {
public:
    using Kind = std::variant<MultiScaleGaussian, SquaredInverse, Linear, Quadratic>;

    KernelSpec(Kind kind);  // validates radii / sigma

    static KernelSpec multi_scale_gaussian(std::vector<double> radii);
    static KernelSpec squared_inverse(double sigma);
    static KernelSpec linear();
    static KernelSpec quadratic();

    /// Radii {0.1, 1, 5, 10, 20, 50}.
    static KernelSpec default_gaussian();

    /// Parses `msg:0.1,1,5` | `sqinv:12` | `linear` | `quad`.
    static KernelSpec parse(std::string_view text);
    /// Inverse of parse; shortest round-trip representation of each number.
    std::string to_string() const;

    const Kind& kind() const noexcept { return kind_; }

    /// True for kinds that depend only on |x - y| (Gaussian, squared inverse).
    bool is_stationary() const noexcept;

    /// Kernel value as a function of the squared distance; stationary kinds only.
    double from_sq_dist(double sq_dist) const;
    /// For stationary kinds, grad_x k(x,y) = coef * (x - y) with coef = 2 * dk/d(sq_dist).
    double stationary_coef(double sq_dist) const;

    /// Kernel value as a function of x.y; dot-product kinds only.
    double from_dot(double xy) const;
    /// For dot kinds, grad_x k(x,y) = coef * y.
    double dot_coef(double xy) const;

private:
    Kind kind_;
};

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& a, const Matrix& b);

std::vector<double> kernel_grad_x(const KernelSpec& spec, std::span<const double> x,
                                  std::span<const double> y);

}  // namespace cindep
