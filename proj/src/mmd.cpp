#include "cindep/mmd.hpp"

#include "cindep/errors.hpp"
#include "cindep/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

namespace cindep {

std::string_view sampling_mode_name(SamplingMode mode) noexcept {
    return mode == SamplingMode::Split ? "split" : "coupled";
}

namespace {

void check_estimator_inputs(const Matrix& z, const Matrix& zbar) {
    if (z.cols() != zbar.cols()) {
        throw DimensionError("MMD sets differ in dimension: " + std::to_string(z.cols()) + " vs " +
                             std::to_string(zbar.cols()));
    }
    if (z.rows() != zbar.rows()) {
        throw DimensionError("MMD sets differ in sample count: " + std::to_string(z.rows()) +
                             " vs " + std::to_string(zbar.rows()));
    }
    if (z.rows() < 2) throw ArgumentError("MMD estimator needs at least 2 samples");
}

struct PairTerm {
    double value;
    double coef;
};

PairTerm pair_term(const KernelSpec& kernel, std::span<const double> x, std::span<const double> y) {
    if (kernel.is_stationary()) {
        const double d2 = squared_distance(x, y);
        return {kernel.from_sq_dist(d2), kernel.stationary_coef(d2)};
    }
    const double xy = dot(x, y);
    return {kernel.from_dot(xy), kernel.dot_coef(xy)};
}

// grad_x += w * grad_x k(x, y) / coef, i.e. w * (x - y) or w * y.
void add_pair_grad(bool stationary, double w, std::span<const double> x, std::span<const double> y,
                   std::span<double> grad_x) {
    if (stationary) {
        for (std::size_t d = 0; d < x.size(); ++d) grad_x[d] += w * (x[d] - y[d]);
    } else {
        for (std::size_t d = 0; d < x.size(); ++d) grad_x[d] += w * y[d];
    }
}

Matrix gather_rows(const LatentBatch& codes, std::span<const std::size_t> source, std::size_t rows) {
    const std::size_t K = codes.codebooks();
    const std::size_t N = codes.dim();
    Matrix out(rows, K * N);
    for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < K; ++k) {
            const auto src = codes.code(source[i * K + k], k);
            std::copy(src.begin(), src.end(), dst.begin() + k * N);
        }
    }
    return out;
}

void scatter_rows(const Matrix& grad, std::span<const std::size_t> source, LatentBatch& out) {
    const std::size_t K = out.codebooks();
    const std::size_t N = out.dim();
    for (std::size_t i = 0; i < grad.rows(); ++i) {
        const auto g = grad.row(i);
        for (std::size_t k = 0; k < K; ++k) {
            auto dst = out.code(source[i * K + k], k);
            for (std::size_t n = 0; n < N; ++n) dst[n] += g[k * N + n];
        }
    }
}

MmdReport make_report(double value, std::size_t rows, const MmdConfig& cfg, std::uint64_t seed) {
    MmdReport r;
    r.value = value;
    r.sample_count = rows;
    r.kernel = cfg.kernel.to_string();
    r.seed = seed;
    r.delay = cfg.apply_delay;
    r.mode = cfg.mode;
    return r;
}

}  // namespace

LatentBatch shuffle_factorized(const LatentBatch& z, SeededRng& rng) {
    if (z.samples() < 2) throw ArgumentError("shuffle_factorized needs at least 2 samples");
    LatentBatch out(z.samples(), z.codebooks(), z.dim());
    for (std::size_t k = 0; k < z.codebooks(); ++k) {
        const auto perm = sample_permutation(rng, z.samples());
        for (std::size_t i = 0; i < z.samples(); ++i) {
            const auto src = z.code(perm[i], k);
            std::copy(src.begin(), src.end(), out.code(i, k).begin());
        }
    }
    return out;
}

MmdReport mmd_unbiased(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar) {
    check_estimator_inputs(z, zbar);
    const std::size_t S = z.rows();
    double within_z = 0.0;
    double within_zbar = 0.0;
    double cross = 0.0;
    for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = i + 1; j < S; ++j) {
            within_z += kernel_eval(kernel, z.row(i), z.row(j));
            within_zbar += kernel_eval(kernel, zbar.row(i), zbar.row(j));
        }
        for (std::size_t j = 0; j < S; ++j) cross += kernel_eval(kernel, z.row(i), zbar.row(j));
    }
    const double s = static_cast<double>(S);
    MmdReport r;
    r.value = 2.0 * (within_z + within_zbar) / (s * (s - 1.0)) - 2.0 * cross / (s * s);
    r.sample_count = S;
    r.kernel = kernel.to_string();
    return r;
}

double mmd_biased(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar) {
    check_estimator_inputs(z, zbar);
    const double s = static_cast<double>(z.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.rows(); ++j) {
            total += kernel_eval(kernel, z.row(i), z.row(j)) +
                     kernel_eval(kernel, zbar.row(i), zbar.row(j)) -
                     2.0 * kernel_eval(kernel, z.row(i), zbar.row(j));
        }
    }
    return total / (s * s);
}

MmdGradient mmd_grad(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar) {
    check_estimator_inputs(z, zbar);
    const std::size_t S = z.rows();
    const double s = static_cast<double>(S);
    const double within = 2.0 / (s * (s - 1.0));
    const double cross = -2.0 / (s * s);
    const bool stationary = kernel.is_stationary();

    MmdGradient g{Matrix(S, z.cols()), Matrix(S, z.cols())};
    for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = i + 1; j < S; ++j) {
            const double wz = within * pair_term(kernel, z.row(i), z.row(j)).coef;
            add_pair_grad(stationary, wz, z.row(i), z.row(j), g.grad_z.row(i));
            add_pair_grad(stationary, wz, z.row(j), z.row(i), g.grad_z.row(j));
            const double wb = within * pair_term(kernel, zbar.row(i), zbar.row(j)).coef;
            add_pair_grad(stationary, wb, zbar.row(i), zbar.row(j), g.grad_zbar.row(i));
            add_pair_grad(stationary, wb, zbar.row(j), zbar.row(i), g.grad_zbar.row(j));
        }
        for (std::size_t j = 0; j < S; ++j) {
            const double w = cross * pair_term(kernel, z.row(i), zbar.row(j)).coef;
            add_pair_grad(stationary, w, z.row(i), zbar.row(j), g.grad_z.row(i));
            add_pair_grad(stationary, w, zbar.row(j), z.row(i), g.grad_zbar.row(j));
        }
    }
    return g;
}

FactorizedPlan make_factorized_plan(std::size_t samples, std::size_t codebooks,
                                    std::size_t segment_length, bool apply_delay, SamplingMode mode,
                                    SeededRng& rng) {
    const std::size_t K = codebooks;
    const std::size_t T = segment_length;
    if (K == 0) throw ArgumentError("codes need at least one codebook");
    if (T == 0 || samples % T != 0) {
        throw DimensionError("sample count " + std::to_string(samples) +
                             " is not a multiple of segment length " + std::to_string(T));
    }
    const std::size_t B = samples / T;

    // Source sample of grouped sample g at codebook k, after optional delay.
    std::size_t grouped = samples;
    std::size_t valid = T;
    if (apply_delay) {
        if (T < K) {
            throw ArgumentError("too few complete frames after delay: segment length " +
                                std::to_string(T) + " with " + std::to_string(K) + " codebooks");
        }
        valid = T - K + 1;
        grouped = B * valid;
    }
    const auto source = [&](std::size_t g, std::size_t k) {
        if (!apply_delay) return g;
        const std::size_t b = g / valid;
        const std::size_t t = g % valid;
        return b * T + delayed_source_frame(t, k, K);
    };

    FactorizedPlan plan;
    plan.codebooks = K;
    const std::size_t offset = mode == SamplingMode::Split ? grouped / 2 : 0;
    plan.rows = mode == SamplingMode::Split ? grouped / 2 : grouped;
    if (plan.rows < 2) {
        throw ArgumentError("too few complete frames for the estimator: " +
                            std::to_string(plan.rows) + " samples");
    }
    plan.joint_source.resize(plan.rows * K);
    plan.shuffled_source.resize(plan.rows * K);
    for (std::size_t i = 0; i < plan.rows; ++i) {
        for (std::size_t k = 0; k < K; ++k) plan.joint_source[i * K + k] = source(i, k);
    }
    for (std::size_t k = 0; k < K; ++k) {
        const auto perm = sample_permutation(rng, plan.rows);
        for (std::size_t i = 0; i < plan.rows; ++i) {
            plan.shuffled_source[i * K + k] = source(offset + perm[i], k);
        }
    }
    return plan;
}

IndependenceLoss independence_loss(const LatentBatch& codes, std::size_t segment_length,
                                   const MmdConfig& cfg, SeededRng& rng, bool with_grad) {
    if (!codes.all_finite()) throw ArgumentError("independence_loss: non-finite codes");
    const auto plan = make_factorized_plan(codes.samples(), codes.codebooks(), segment_length,
                                           cfg.apply_delay, cfg.mode, rng);
    const Matrix z = gather_rows(codes, plan.joint_source, plan.rows);
    const Matrix zbar = gather_rows(codes, plan.shuffled_source, plan.rows);

    IndependenceLoss out;
    out.report = make_report(mmd_unbiased(cfg.kernel, z, zbar).value, plan.rows, cfg, rng.seed());
    if (with_grad) {
        const auto g = mmd_grad(cfg.kernel, z, zbar);
        out.grad = LatentBatch(codes.samples(), codes.codebooks(), codes.dim());
        scatter_rows(g.grad_z, plan.joint_source, out.grad);
        scatter_rows(g.grad_zbar, plan.shuffled_source, out.grad);
    }
    return out;
}

IndependenceLoss independence_loss(const LatentBatch& codes, std::size_t segment_length,
                                   const MmdConfig& cfg, bool with_grad) {
    SeededRng rng(cfg.seed);
    return independence_loss(codes, segment_length, cfg, rng, with_grad);
}

namespace {

// Sum over radii of the product over codebooks of per-radius factors, for
// partners j in [first, last). R > 0 fixes the radius count at compile time.
template <std::size_t R>
void gaussian_products(
    const double* const* bases, std::size_t K, std::size_t width_rt, const double* inv,
    const std::uint32_t* v, std::size_t first, std::size_t last, double* scratch, double* value,
    double* coef) {
    const std::size_t width = R > 0 ? R : width_rt;
    double fixed[R > 0 ? R : 1];
    double* p = R > 0 ? fixed : scratch;
    for (std::size_t j = first; j < last; ++j) {
        const std::uint32_t* vj = v + j * K;
        const double* e = bases[0] + vj[0] * width;
        for (std::size_t r = 0; r < width; ++r) p[r] = e[r];
        for (std::size_t k = 1; k < K; ++k) {
            e = bases[k] + vj[k] * width;
            for (std::size_t r = 0; r < width; ++r) p[r] *= e[r];
        }
        double val = 0.0;
        double c = 0.0;
        for (std::size_t r = 0; r < width; ++r) {
            val += p[r];
            c -= p[r] * inv[r];
        }
        value[j - first] = val;
        if (coef) coef[j - first] = c;
    }
}

// Per-codebook pair tables for the indexed estimator.
//
// Gaussian: products over codebooks of per-radius exp tables, so no exp per pair.
// Other kinds: per-codebook squared distances or dot products, summed per pair.
class FactoredKernel {
public:
    FactoredKernel(const KernelSpec& kernel, const std::vector<Matrix>& tables)
        : kernel_(kernel), stationary_(kernel.is_stationary()) {
        const std::size_t K = tables.size();
        if (const auto* g = std::get_if<MultiScaleGaussian>(&kernel.kind())) {
            gaussian_ = true;
            for (double r : g->radii) inv_sq_.push_back(1.0 / (r * r));
        }
        width_ = gaussian_ ? inv_sq_.size() : 1;
        sizes_.resize(K);
        pair_.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            const Matrix& t = tables[k];
            const std::size_t M = t.rows();
            sizes_[k] = M;
            pair_[k].resize(M * M * width_);
            for (std::size_t a = 0; a < M; ++a) {
                for (std::size_t b = 0; b < M; ++b) {
                    double* dst = &pair_[k][(a * M + b) * width_];
                    if (gaussian_) {
                        const double d2 = squared_distance(t.row(a), t.row(b));
                        for (std::size_t r = 0; r < width_; ++r) dst[r] = std::exp(-0.5 * d2 * inv_sq_[r]);
                    } else if (stationary_) {
                        dst[0] = squared_distance(t.row(a), t.row(b));
                    } else {
                        dst[0] = dot(t.row(a), t.row(b));
                    }
                }
            }
        }
    }

    bool stationary() const noexcept { return stationary_; }

    // Kernel values and gradient coefficients of sample `u` against samples
    // [first, last) of `v`; every sample is K table indices.
    void row(const std::uint32_t* u, const std::uint32_t* v, std::size_t first, std::size_t last,
             double* value, double* coef) {
        const std::size_t K = sizes_.size();
        const std::size_t R = width_;
        bases_.resize(K);
        for (std::size_t k = 0; k < K; ++k) bases_[k] = &pair_[k][u[k] * sizes_[k] * R];
        if (gaussian_) {
            switch (R) {
                case 1: return gaussian_row<1>(v, first, last, value, coef);
                case 2: return gaussian_row<2>(v, first, last, value, coef);
                case 3: return gaussian_row<3>(v, first, last, value, coef);
                case 4: return gaussian_row<4>(v, first, last, value, coef);
                case 5: return gaussian_row<5>(v, first, last, value, coef);
                case 6: return gaussian_row<6>(v, first, last, value, coef);
                case 7: return gaussian_row<7>(v, first, last, value, coef);
                case 8: return gaussian_row<8>(v, first, last, value, coef);
                default: return gaussian_row<0>(v, first, last, value, coef);
            }
        }
        for (std::size_t j = first; j < last; ++j) {
            const std::uint32_t* vj = v + j * K;
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += bases_[k][vj[k]];
            if (stationary_) {
                value[j - first] = kernel_.from_sq_dist(acc);
                if (coef) coef[j - first] = kernel_.stationary_coef(acc);
            } else {
                value[j - first] = kernel_.from_dot(acc);
                if (coef) coef[j - first] = kernel_.dot_coef(acc);
            }
        }
    }

private:
    template <std::size_t R>
    void gaussian_row(const std::uint32_t* v, std::size_t first, std::size_t last, double* value,
                      double* coef) {
        scratch_.resize(width_);
        gaussian_products<R>(bases_.data(), sizes_.size(), width_, inv_sq_.data(), v, first, last,
                             scratch_.data(), value, coef);
    }

    const KernelSpec& kernel_;
    bool stationary_;
    bool gaussian_ = false;
    std::size_t width_ = 1;
    std::vector<double> inv_sq_;
    std::vector<std::size_t> sizes_;
    std::vector<std::vector<double>> pair_;
    std::vector<const double*> bases_;
    std::vector<double> scratch_;
};

// Gradient of one set expressed through table rows:
// grad(i, k) = alpha[i] * T_k[idx(i,k)] + sum_m weight[i][offset_k + m] * T_k[m].
//
// While a row of pairs (i, j = first..last) is processed, row i collects into
// `weight` and the j side into the transposed `weight_t`, so both inner loops
// write contiguously. fold() merges the two before expansion.
struct TableGradient {
    std::size_t rows = 0;
    std::size_t stride = 0;
    bool stationary = true;
    std::vector<double> alpha;
    std::vector<double> weight;    // rows x stride
    std::vector<double> weight_t;  // stride x rows

    TableGradient(std::size_t rows, std::size_t stride, bool stationary)
        : rows(rows), stride(stride), stationary(stationary), alpha(rows, 0.0),
          weight(rows * stride, 0.0), weight_t(rows * stride, 0.0) {}

    // Row i against partners j in [first, last) with weights w[j - first].
    void add_own(std::size_t i, const double* w, const std::uint32_t* partners, std::size_t first,
                 std::size_t last, const std::size_t* offsets, std::size_t K) {
        double* row = &weight[i * stride];
        const double sign = stationary ? -1.0 : 1.0;
        double total = 0.0;
        for (std::size_t j = first; j < last; ++j) {
            const double wj = w[j - first];
            total += wj;
            const std::uint32_t* p = partners + j * K;
            for (std::size_t k = 0; k < K; ++k) row[offsets[k] + p[k]] += sign * wj;
        }
        if (stationary) alpha[i] += total;
    }

    // Partners j in [first, last), each against the single sample `other`.
    void add_partners(const double* w, const std::uint32_t* other, std::size_t first,
                      std::size_t last, const std::size_t* offsets, std::size_t K) {
        const double sign = stationary ? -1.0 : 1.0;
        for (std::size_t k = 0; k < K; ++k) {
            double* col = &weight_t[(offsets[k] + other[k]) * rows];
            for (std::size_t j = first; j < last; ++j) col[j] += sign * w[j - first];
        }
        if (stationary) {
            for (std::size_t j = first; j < last; ++j) alpha[j] += w[j - first];
        }
    }

    void fold() {
        for (std::size_t p = 0; p < stride; ++p) {
            const double* col = &weight_t[p * rows];
            for (std::size_t i = 0; i < rows; ++i) weight[i * stride + p] += col[i];
        }
        weight_t.clear();
        weight_t.shrink_to_fit();
    }
};

// Pairs are visited in column blocks so the gradient rows touched by the
// inner loop stay in cache.
constexpr std::size_t kBlock = 128;

}  // namespace

IndependenceLoss independence_loss_indexed(std::span<const std::uint32_t> indices,
                                           const std::vector<Matrix>& tables,
                                           std::size_t segment_length, const MmdConfig& cfg,
                                           SeededRng& rng, bool with_grad) {
    const std::size_t K = tables.size();
    if (K == 0) throw ArgumentError("independence_loss_indexed: no code tables");
    if (indices.size() % K != 0) throw DimensionError("index count is not a multiple of K");
    const std::size_t N = tables.front().cols();
    std::vector<std::size_t> offsets(K);
    std::size_t stride = 0;
    for (std::size_t k = 0; k < K; ++k) {
        if (tables[k].cols() != N) throw DimensionError("code tables differ in dimension");
        if (!tables[k].all_finite()) throw ArgumentError("code tables contain non-finite values");
        offsets[k] = stride;
        stride += tables[k].rows();
    }
    const std::size_t samples = indices.size() / K;
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t k = 0; k < K; ++k) {
            if (indices[s * K + k] >= tables[k].rows()) {
                throw ArgumentError("code index out of range for table " + std::to_string(k));
            }
        }
    }

    const auto plan = make_factorized_plan(samples, K, segment_length, cfg.apply_delay, cfg.mode, rng);
    const std::size_t S = plan.rows;
    std::vector<std::uint32_t> u(S * K);
    std::vector<std::uint32_t> v(S * K);
    for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            u[i * K + k] = indices[plan.joint_source[i * K + k] * K + k];
            v[i * K + k] = indices[plan.shuffled_source[i * K + k] * K + k];
        }
    }

    FactoredKernel fk(cfg.kernel, tables);
    const bool stationary = fk.stationary();
    const double s = static_cast<double>(S);
    const double within = 2.0 / (s * (s - 1.0));
    const double cross = -2.0 / (s * s);

    std::vector<TableGradient> grads;
    if (with_grad) {
        grads.emplace_back(S, stride, stationary);
        grads.emplace_back(S, stride, stationary);
    }
    std::vector<double> val(kBlock);
    std::vector<double> w(kBlock);
    double* coef_out = with_grad ? w.data() : nullptr;
    const std::size_t* off = offsets.data();

    double within_sum = 0.0;
    double cross_sum = 0.0;
    // Pair (i, j) of one set adds to the gradient rows of both i and j.
    const auto within_rows = [&](const std::vector<std::uint32_t>& set, std::size_t g,
                                 std::size_t i, std::size_t first, std::size_t last) {
        const std::uint32_t* xi = &set[i * K];
        fk.row(xi, set.data(), first, last, val.data(), coef_out);
        for (std::size_t j = first; j < last; ++j) within_sum += val[j - first];
        if (!with_grad) return;
        for (std::size_t j = first; j < last; ++j) w[j - first] *= within;
        grads[g].add_own(i, w.data(), set.data(), first, last, off, K);
        grads[g].add_partners(w.data(), xi, first, last, off, K);
    };

    for (std::size_t jb = 0; jb < S; jb += kBlock) {
        const std::size_t jend = std::min(S, jb + kBlock);
        for (std::size_t i = 0; i + 1 < jend; ++i) {
            const std::size_t first = std::max(jb, i + 1);
            if (first >= jend) continue;
            within_rows(u, 0, i, first, jend);
            within_rows(v, 1, i, first, jend);
        }
        for (std::size_t i = 0; i < S; ++i) {
            const std::uint32_t* ui = &u[i * K];
            fk.row(ui, v.data(), jb, jend, val.data(), coef_out);
            for (std::size_t j = jb; j < jend; ++j) cross_sum += val[j - jb];
            if (!with_grad) continue;
            for (std::size_t j = jb; j < jend; ++j) w[j - jb] *= cross;
            grads[0].add_own(i, w.data(), v.data(), jb, jend, off, K);
            grads[1].add_partners(w.data(), ui, jb, jend, off, K);
        }
    }

    IndependenceLoss out;
    out.report = make_report(within * within_sum + cross * cross_sum, S, cfg, rng.seed());
    if (!with_grad) return out;

    out.grad = LatentBatch(samples, K, N);
    for (auto& g : grads) g.fold();
    const auto expand = [&](const TableGradient& tg, const std::vector<std::uint32_t>& idx,
                            const std::vector<std::size_t>& source) {
        for (std::size_t i = 0; i < S; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                auto dst = out.grad.code(source[i * K + k], k);
                const Matrix& t = tables[k];
                const double a = tg.alpha[i];
                if (a != 0.0) {
                    const auto own = t.row(idx[i * K + k]);
                    for (std::size_t n = 0; n < N; ++n) dst[n] += a * own[n];
                }
                const double* w = &tg.weight[i * stride + offsets[k]];
                for (std::size_t m = 0; m < t.rows(); ++m) {
                    if (w[m] == 0.0) continue;
                    const auto entry = t.row(m);
                    for (std::size_t n = 0; n < N; ++n) dst[n] += w[m] * entry[n];
                }
            }
        }
    };
    expand(grads[0], u, plan.joint_source);
    expand(grads[1], v, plan.shuffled_source);
    return out;
}

}  // namespace cindep
