#include "cindep/kernels.hpp"

#include "cindep/errors.hpp"

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace cindep {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_same_dim(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw DimensionError("kernel arguments differ in dimension: " + std::to_string(x.size()) +
                             " vs " + std::to_string(y.size()));
    }
}

double parse_positive(std::string_view text) {
    double value = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw FormatError("kernel parameter is not a number: '" + std::string(text) + "'");
    }
    if (!(value > 0.0) || !std::isfinite(value)) {
        throw FormatError("kernel parameter must be positive: '" + std::string(text) + "'");
    }
    return value;
}

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

KernelSpec::KernelSpec(Kind kind) : kind_(std::move(kind)) {
    std::visit(overloaded{
                   [](const MultiScaleGaussian& g) {
                       if (g.radii.empty()) throw ArgumentError("Gaussian kernel needs radii");
                       for (double r : g.radii) {
                           if (!(r > 0.0) || !std::isfinite(r)) {
                               throw ArgumentError("Gaussian radii must be positive");
                           }
                       }
                   },
                   [](const SquaredInverse& s) {
                       if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) {
                           throw ArgumentError("squared-inverse sigma must be positive");
                       }
                   },
                   [](const auto&) {},
               },
               kind_);
}

KernelSpec KernelSpec::multi_scale_gaussian(std::vector<double> radii) {
    return KernelSpec(MultiScaleGaussian{std::move(radii)});
}
KernelSpec KernelSpec::squared_inverse(double sigma) { return KernelSpec(SquaredInverse{sigma}); }
KernelSpec KernelSpec::linear() { return KernelSpec(Linear{}); }
KernelSpec KernelSpec::quadratic() { return KernelSpec(Quadratic{}); }

KernelSpec KernelSpec::default_gaussian() {
    return multi_scale_gaussian({0.1, 1.0, 5.0, 10.0, 20.0, 50.0});
}

KernelSpec KernelSpec::parse(std::string_view text) {
    if (text == "linear") return linear();
    if (text == "quad") return quadratic();
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw FormatError("unknown kernel '" + std::string(text) + "'");
    }
    const auto name = text.substr(0, colon);
    auto args = text.substr(colon + 1);
    if (name == "sqinv") return squared_inverse(parse_positive(args));
    if (name == "msg") {
        std::vector<double> radii;
        while (true) {
            const auto comma = args.find(',');
            radii.push_back(parse_positive(args.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            args.remove_prefix(comma + 1);
        }
        return multi_scale_gaussian(std::move(radii));
    }
    throw FormatError("unknown kernel '" + std::string(text) + "'");
}

std::string KernelSpec::to_string() const {
    return std::visit(overloaded{
                          [](const MultiScaleGaussian& g) {
                              std::string out = "msg:";
                              for (std::size_t i = 0; i < g.radii.size(); ++i) {
                                  if (i) out += ',';
                                  out += format_number(g.radii[i]);
                              }
                              return out;
                          },
                          [](const SquaredInverse& s) { return "sqinv:" + format_number(s.sigma); },
                          [](const Linear&) { return std::string("linear"); },
                          [](const Quadratic&) { return std::string("quad"); },
                      },
                      kind_);
}

bool KernelSpec::is_stationary() const noexcept {
    return std::holds_alternative<MultiScaleGaussian>(kind_) ||
           std::holds_alternative<SquaredInverse>(kind_);
}

double KernelSpec::from_sq_dist(double sq_dist) const {
    if (const auto* g = std::get_if<MultiScaleGaussian>(&kind_)) {
        double k = 0.0;
        for (double r : g->radii) k += std::exp(-sq_dist / (2.0 * r * r));
        return k;
    }
    if (const auto* s = std::get_if<SquaredInverse>(&kind_)) {
        return 1.0 / (1.0 + sq_dist / (s->sigma * s->sigma));
    }
    throw ArgumentError("from_sq_dist called on a dot-product kernel");
}

double KernelSpec::stationary_coef(double sq_dist) const {
    if (const auto* g = std::get_if<MultiScaleGaussian>(&kind_)) {
        double c = 0.0;
        for (double r : g->radii) {
            const double inv = 1.0 / (r * r);
            c -= inv * std::exp(-0.5 * sq_dist * inv);
        }
        return c;
    }
    if (const auto* s = std::get_if<SquaredInverse>(&kind_)) {
        const double s2 = s->sigma * s->sigma;
        const double k = 1.0 / (1.0 + sq_dist / s2);
        return -2.0 / s2 * k * k;
    }
    throw ArgumentError("stationary_coef called on a dot-product kernel");
}

double KernelSpec::from_dot(double xy) const {
    if (std::holds_alternative<Linear>(kind_)) return xy;
    if (std::holds_alternative<Quadratic>(kind_)) return xy * xy;
    throw ArgumentError("from_dot called on a stationary kernel");
}

double KernelSpec::dot_coef(double xy) const {
    if (std::holds_alternative<Linear>(kind_)) return 1.0;
    if (std::holds_alternative<Quadratic>(kind_)) return 2.0 * xy;
    throw ArgumentError("dot_coef called on a stationary kernel");
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
    check_same_dim(x, y);
    if (spec.is_stationary()) return spec.from_sq_dist(squared_distance(x, y));
    return spec.from_dot(dot(x, y));
}

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("kernel_matrix: column mismatch " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()));
    }
    if (spec.is_stationary()) {
        Matrix out = pairwise_sq_dists(a, b);
        for (double& v : out.data()) v = spec.from_sq_dist(v);
        return out;
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = spec.from_dot(dot(a.row(i), b.row(j)));
    }
    return out;
}

std::vector<double> kernel_grad_x(const KernelSpec& spec, std::span<const double> x,
                                  std::span<const double> y) {
    check_same_dim(x, y);
    std::vector<double> g(x.size());
    if (spec.is_stationary()) {
        const double c = spec.stationary_coef(squared_distance(x, y));
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = c * (x[i] - y[i]);
    } else {
        const double c = spec.dot_coef(dot(x, y));
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = c * y[i];
    }
    return g;
}

}  // namespace cindep
