#include "cindep/quantizers.hpp"

#include "cindep/binio.hpp"
#include "cindep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>

namespace cindep {

namespace {

constexpr char kMagic[4] = {'C', 'Q', 'N', 'T'};
constexpr std::uint16_t kVersion = 1;

void check_codebook(const Codebook& cb) {
    if (cb.entries.rows() == 0 || cb.entries.cols() == 0) {
        throw ArgumentError("codebook must have at least one entry of dimension >= 1");
    }
    if (!cb.entries.all_finite()) throw ArgumentError("codebook holds non-finite entries");
    if (cb.usage_counts.size() != cb.entries.rows()) {
        throw ArgumentError("codebook usage_counts length differs from entry count");
    }
}

void check_input(const Matrix& x, std::size_t dim) {
    if (x.cols() != dim) {
        throw DimensionError("input dimension " + std::to_string(x.cols()) + " does not match " +
                             std::to_string(dim));
    }
    if (!x.all_finite()) throw ArgumentError("quantizer input contains non-finite values");
}

double mean_sq_diff(const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

// Distinct random rows when possible, otherwise sampled with replacement.
std::vector<std::size_t> pick_rows(std::size_t available, std::size_t wanted, SeededRng& rng) {
    std::vector<std::size_t> rows(wanted);
    if (available >= wanted) {
        const auto perm = sample_permutation(rng, available);
        for (std::size_t i = 0; i < wanted; ++i) rows[i] = perm[i];
    } else {
        for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_index(available));
    }
    return rows;
}

Matrix slice_columns(const Matrix& x, std::size_t begin, std::size_t width) {
    Matrix out(x.rows(), width);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto src = x.row(r).subspan(begin, width);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

Codebook::Codebook(Matrix e)
    : entries(std::move(e)), usage_counts(entries.rows(), 0.0),
      ema_cluster_size(entries.rows(), 1.0), ema_embed_sum(entries) {}

void RvqQuantizer::validate() const {
    if (stages.empty()) throw ArgumentError("RVQ needs at least one stage");
    for (const auto& cb : stages) {
        check_codebook(cb);
        if (cb.dim() != stages.front().dim()) throw ArgumentError("RVQ stages differ in dimension");
    }
}

void PvqQuantizer::validate() const {
    if (groups.empty()) throw ArgumentError("PVQ needs at least one group");
    for (const auto& cb : groups) {
        check_codebook(cb);
        if (cb.dim() != groups.front().dim()) throw ArgumentError("PVQ groups differ in dimension");
    }
}

std::uint32_t nearest_code(const Codebook& cb, std::span<const double> x) {
    if (x.size() != cb.dim()) {
        throw DimensionError("query dimension " + std::to_string(x.size()) +
                             " does not match codebook dimension " + std::to_string(cb.dim()));
    }
    std::uint32_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < cb.size(); ++m) {
        const double d = squared_distance(cb.entries.row(m), x);
        if (d < best_dist) {
            best_dist = d;
            best = static_cast<std::uint32_t>(m);
        }
    }
    return best;
}

QuantizeResult rvq_encode(const RvqQuantizer& q, const Matrix& x) {
    q.validate();
    const std::size_t N = q.dim();
    const std::size_t K = q.codebooks();
    check_input(x, N);
    const std::size_t S = x.rows();

    QuantizeResult res;
    res.indices.resize(S * K);
    res.codes = LatentBatch(S, K, N);
    res.reconstruction = Matrix(S, N);
    res.active_stages = K;

    Matrix residual = x;
    double stage_err = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const auto& cb = q.stages[k];
        for (std::size_t s = 0; s < S; ++s) {
            auto r = residual.row(s);
            const auto idx = nearest_code(cb, r);
            res.indices[s * K + k] = idx;
            const auto entry = cb.entries.row(idx);
            auto code = res.codes.code(s, k);
            auto recon = res.reconstruction.row(s);
            for (std::size_t n = 0; n < N; ++n) {
                code[n] = entry[n];
                recon[n] += entry[n];
                r[n] -= entry[n];
                stage_err += r[n] * r[n];
            }
        }
    }
    res.commit_loss = mean_sq_diff(x, res.reconstruction);
    res.codebook_loss = S ? stage_err / static_cast<double>(S * N * K) : 0.0;
    res.residual = std::move(residual);
    return res;
}

Matrix rvq_decode(const RvqQuantizer& q, std::span<const std::uint32_t> indices) {
    q.validate();
    const std::size_t K = q.codebooks();
    const std::size_t N = q.dim();
    if (indices.size() % K != 0) throw DimensionError("index count is not a multiple of K");
    const std::size_t S = indices.size() / K;
    Matrix out(S, N);
    for (std::size_t s = 0; s < S; ++s) {
        auto row = out.row(s);
        for (std::size_t k = 0; k < K; ++k) {
            const auto idx = indices[s * K + k];
            if (idx >= q.stages[k].size()) {
                throw ArgumentError("index " + std::to_string(idx) + " out of range for stage " +
                                    std::to_string(k));
            }
            const auto entry = q.stages[k].entries.row(idx);
            for (std::size_t n = 0; n < N; ++n) row[n] += entry[n];
        }
    }
    return out;
}

QuantizeResult pvq_encode_depth(const PvqQuantizer& q, const Matrix& x, std::size_t active) {
    q.validate();
    const std::size_t K = q.codebooks();
    const std::size_t G = q.group_dim();
    const std::size_t N = q.dim();
    check_input(x, N);
    if (active < 1 || active > K) {
        throw ArgumentError("active stage count must be in [1, " + std::to_string(K) + "]");
    }
    const std::size_t S = x.rows();

    QuantizeResult res;
    res.indices.resize(S * K);
    res.codes = LatentBatch(S, K, N);
    res.reconstruction = Matrix(S, N);
    res.active_stages = active;

    double commit = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
        const auto xs = x.row(s);
        auto recon = res.reconstruction.row(s);
        for (std::size_t k = 0; k < K; ++k) {
            const auto slice = xs.subspan(k * G, G);
            const auto idx = nearest_code(q.groups[k], slice);
            res.indices[s * K + k] = idx;
            const auto entry = q.groups[k].entries.row(idx);
            for (std::size_t n = 0; n < G; ++n) {
                const double d = slice[n] - entry[n];
                commit += d * d;
            }
            if (k >= active) continue;
            auto code = res.codes.code(s, k);
            for (std::size_t n = 0; n < G; ++n) {
                code[k * G + n] = entry[n];
                recon[k * G + n] = entry[n];
            }
        }
    }
    // The encoder commits to its selected codes whether or not dropout hides them.
    const double denom = static_cast<double>(S * N);
    res.commit_loss = S ? commit / denom : 0.0;
    res.codebook_loss = res.commit_loss;
    res.residual = x;
    for (std::size_t i = 0; i < x.size(); ++i) res.residual.data()[i] -= res.reconstruction.data()[i];
    return res;
}

QuantizeResult pvq_encode(const PvqQuantizer& q, const Matrix& x, SeededRng& rng) {
    std::size_t active = q.codebooks();
    if (q.dropout_enabled) active = 1 + static_cast<std::size_t>(rng.uniform_index(q.codebooks()));
    return pvq_encode_depth(q, x, active);
}

Matrix pvq_decode(const PvqQuantizer& q, std::span<const std::uint32_t> indices) {
    q.validate();
    const std::size_t K = q.codebooks();
    const std::size_t G = q.group_dim();
    if (indices.size() % K != 0) throw DimensionError("index count is not a multiple of K");
    const std::size_t S = indices.size() / K;
    Matrix out(S, q.dim());
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < K; ++k) {
            const auto idx = indices[s * K + k];
            if (idx >= q.groups[k].size()) {
                throw ArgumentError("index " + std::to_string(idx) + " out of range for group " +
                                    std::to_string(k));
            }
            const auto entry = q.groups[k].entries.row(idx);
            for (std::size_t n = 0; n < G; ++n) out(s, k * G + n) = entry[n];
        }
    }
    return out;
}

QuantizeResult encode(const Quantizer& q, const Matrix& x) {
    if (const auto* r = std::get_if<RvqQuantizer>(&q)) return rvq_encode(*r, x);
    const auto& p = std::get<PvqQuantizer>(q);
    return pvq_encode_depth(p, x, p.codebooks());
}

void update_codebook(Codebook& cb, const Matrix& vectors, std::span<const std::uint32_t> assignments,
                     const EmaSettings& ema, SeededRng& rng) {
    const std::size_t M = cb.size();
    const std::size_t N = cb.dim();
    if (vectors.rows() == 0) throw ArgumentError("update_codebooks: empty batch");
    if (vectors.cols() != N) throw DimensionError("update batch dimension does not match codebook");
    if (assignments.size() != vectors.rows()) {
        throw DimensionError("assignment count does not match batch rows");
    }
    if (!(ema.decay >= 0.0 && ema.decay < 1.0)) throw ArgumentError("EMA decay must lie in [0, 1)");

    std::vector<double> counts(M, 0.0);
    Matrix sums(M, N);
    for (std::size_t s = 0; s < vectors.rows(); ++s) {
        const auto a = assignments[s];
        counts[a] += 1.0;
        auto dst = sums.row(a);
        const auto src = vectors.row(s);
        for (std::size_t n = 0; n < N; ++n) dst[n] += src[n];
    }

    const double keep = ema.decay;
    const double take = 1.0 - ema.decay;
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        cb.ema_cluster_size[m] = keep * cb.ema_cluster_size[m] + take * counts[m];
        total += cb.ema_cluster_size[m];
        auto es = cb.ema_embed_sum.row(m);
        const auto bs = sums.row(m);
        for (std::size_t n = 0; n < N; ++n) es[n] = keep * es[n] + take * bs[n];
        cb.usage_counts[m] += counts[m];
    }
    const double norm = total + static_cast<double>(M) * ema.epsilon;
    for (std::size_t m = 0; m < M; ++m) {
        const double smoothed = (cb.ema_cluster_size[m] + ema.epsilon) / norm * total;
        if (!(smoothed > 0.0)) continue;
        const auto es = cb.ema_embed_sum.row(m);
        auto entry = cb.entries.row(m);
        for (std::size_t n = 0; n < N; ++n) entry[n] = es[n] / smoothed;
    }

    if (++cb.updates_in_window < std::max<std::size_t>(ema.dead_window, 1)) return;
    for (std::size_t m = 0; m < M; ++m) {
        if (cb.usage_counts[m] >= ema.dead_threshold) continue;
        const auto src = vectors.row(static_cast<std::size_t>(rng.uniform_index(vectors.rows())));
        std::copy(src.begin(), src.end(), cb.entries.row(m).begin());
        std::copy(src.begin(), src.end(), cb.ema_embed_sum.row(m).begin());
        cb.ema_cluster_size[m] = 1.0;
    }
    std::fill(cb.usage_counts.begin(), cb.usage_counts.end(), 0.0);
    cb.updates_in_window = 0;
}

void update_codebooks(RvqQuantizer& q, const Matrix& batch, const EmaSettings& ema,
                      SeededRng& rng) {
    q.validate();
    if (batch.rows() == 0) throw ArgumentError("update_codebooks: empty batch");
    check_input(batch, q.dim());
    const std::size_t K = q.codebooks();
    const std::size_t N = q.dim();
    Matrix residual = batch;
    std::vector<std::uint32_t> assign(batch.rows());
    for (std::size_t k = 0; k < K; ++k) {
        auto& cb = q.stages[k];
        for (std::size_t s = 0; s < batch.rows(); ++s) assign[s] = nearest_code(cb, residual.row(s));
        // Later stages see residuals of the pre-update codes, as in the forward pass.
        const Matrix stage_input = residual;
        for (std::size_t s = 0; s < batch.rows(); ++s) {
            const auto entry = cb.entries.row(assign[s]);
            auto r = residual.row(s);
            for (std::size_t n = 0; n < N; ++n) r[n] -= entry[n];
        }
        update_codebook(cb, stage_input, assign, ema, rng);
    }
}

void update_codebooks(PvqQuantizer& q, const Matrix& batch, const EmaSettings& ema,
                      SeededRng& rng) {
    q.validate();
    if (batch.rows() == 0) throw ArgumentError("update_codebooks: empty batch");
    check_input(batch, q.dim());
    const std::size_t G = q.group_dim();
    std::vector<std::uint32_t> assign(batch.rows());
    for (std::size_t k = 0; k < q.codebooks(); ++k) {
        const Matrix slice = slice_columns(batch, k * G, G);
        for (std::size_t s = 0; s < batch.rows(); ++s) assign[s] = nearest_code(q.groups[k], slice.row(s));
        update_codebook(q.groups[k], slice, assign, ema, rng);
    }
}

void update_codebooks(Quantizer& q, const Matrix& batch, const EmaSettings& ema, SeededRng& rng) {
    std::visit([&](auto& concrete) { update_codebooks(concrete, batch, ema, rng); }, q);
}

Quantizer init_quantizer_from_batch(const Quantizer& shape, const Matrix& batch, SeededRng& rng) {
    if (batch.rows() == 0) throw ArgumentError("cannot initialize codebooks from an empty batch");
    Quantizer out = shape;
    if (auto* r = std::get_if<RvqQuantizer>(&out)) {
        check_input(batch, r->dim());
        Matrix residual = batch;
        for (auto& cb : r->stages) {
            const auto rows = pick_rows(residual.rows(), cb.size(), rng);
            Matrix entries(cb.size(), cb.dim());
            for (std::size_t m = 0; m < rows.size(); ++m) {
                const auto src = residual.row(rows[m]);
                std::copy(src.begin(), src.end(), entries.row(m).begin());
            }
            cb = Codebook(std::move(entries));
            for (std::size_t s = 0; s < residual.rows(); ++s) {
                auto row = residual.row(s);
                const auto entry = cb.entries.row(nearest_code(cb, row));
                for (std::size_t n = 0; n < row.size(); ++n) row[n] -= entry[n];
            }
        }
        return out;
    }
    auto& p = std::get<PvqQuantizer>(out);
    check_input(batch, p.dim());
    const std::size_t G = p.group_dim();
    for (std::size_t k = 0; k < p.codebooks(); ++k) {
        auto& cb = p.groups[k];
        const auto rows = pick_rows(batch.rows(), cb.size(), rng);
        Matrix entries(cb.size(), G);
        for (std::size_t m = 0; m < rows.size(); ++m) {
            const auto src = batch.row(rows[m]).subspan(k * G, G);
            std::copy(src.begin(), src.end(), entries.row(m).begin());
        }
        cb = Codebook(std::move(entries));
    }
    return out;
}

SchemeTag scheme_of(const Quantizer& q) noexcept {
    if (std::holds_alternative<RvqQuantizer>(q)) return SchemeTag::Rvq;
    return std::get<PvqQuantizer>(q).dropout_enabled ? SchemeTag::PvqDropout : SchemeTag::Pvq;
}

std::size_t codebook_count(const Quantizer& q) noexcept {
    return std::visit([](const auto& c) { return c.codebooks(); }, q);
}

std::size_t codebook_size(const Quantizer& q) noexcept {
    if (const auto* r = std::get_if<RvqQuantizer>(&q)) {
        return r->stages.empty() ? 0 : r->stages.front().size();
    }
    const auto& p = std::get<PvqQuantizer>(q);
    return p.groups.empty() ? 0 : p.groups.front().size();
}

std::size_t latent_dim(const Quantizer& q) noexcept {
    return std::visit([](const auto& c) { return c.dim(); }, q);
}

Quantizer make_quantizer(SchemeTag scheme, std::size_t K, std::size_t M, std::size_t N) {
    if (K == 0 || M == 0 || N == 0) throw ArgumentError("quantizer sizes must be positive");
    if (scheme == SchemeTag::Rvq) {
        RvqQuantizer r;
        r.stages.assign(K, Codebook(Matrix(M, N)));
        return r;
    }
    if (N % K != 0) {
        throw ArgumentError("PVQ dimension " + std::to_string(N) + " not divisible by " +
                            std::to_string(K) + " groups");
    }
    PvqQuantizer p;
    p.groups.assign(K, Codebook(Matrix(M, N / K)));
    p.dropout_enabled = scheme == SchemeTag::PvqDropout;
    return p;
}

void write_quantizer(std::ostream& out, const Quantizer& q) {
    const std::size_t K = codebook_count(q);
    const std::size_t M = codebook_size(q);
    const std::size_t N = latent_dim(q);
    const std::size_t C = std::holds_alternative<RvqQuantizer>(q) ? 1 : K;
    out.write(kMagic, 4);
    binio::write_u16(out, kVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(scheme_of(q)));
    binio::write_u32(out, static_cast<std::uint32_t>(K));
    binio::write_u32(out, static_cast<std::uint32_t>(M));
    binio::write_u32(out, static_cast<std::uint32_t>(N));
    binio::write_u32(out, static_cast<std::uint32_t>(C));
    std::visit(
        [&](const auto& concrete) {
            const auto& books = [&]() -> const std::vector<Codebook>& {
                if constexpr (std::is_same_v<std::decay_t<decltype(concrete)>, RvqQuantizer>) {
                    return concrete.stages;
                } else {
                    return concrete.groups;
                }
            }();
            for (const auto& cb : books) {
                for (double v : cb.entries.data()) binio::write_f64(out, v);
            }
        },
        q);
    if (!out) throw FormatError("failed writing quantizer");
}

Quantizer read_quantizer(std::istream& in) {
    char magic[4];
    binio::read_exact(in, magic, 4, "quantizer magic");
    if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("not a CQNT quantizer file");
    const auto version = binio::read_u16(in, "quantizer version");
    if (version != kVersion) {
        throw FormatError("unsupported CQNT version " + std::to_string(version));
    }
    const auto tag = binio::read_u32(in, "scheme tag");
    const auto K = binio::read_u32(in, "K");
    const auto M = binio::read_u32(in, "M");
    const auto N = binio::read_u32(in, "N");
    const auto C = binio::read_u32(in, "C");
    if (tag < 1 || tag > 3) throw FormatError("unknown quantizer scheme tag " + std::to_string(tag));
    if (K == 0 || M == 0 || N == 0) throw FormatError("quantizer header has zero size");
    const auto scheme = static_cast<SchemeTag>(tag);
    const std::uint32_t expected_c = scheme == SchemeTag::Rvq ? 1 : K;
    if (C != expected_c) throw FormatError("group count C inconsistent with scheme");
    if (scheme != SchemeTag::Rvq && N % C != 0) throw FormatError("N not divisible by C");
    // Guard the allocation against absurd headers.
    const std::uint64_t reals = std::uint64_t{K} * M * (N / C);
    if (reals > (std::uint64_t{1} << 32)) throw FormatError("quantizer header sizes too large");

    Quantizer q = make_quantizer(scheme, K, M, N);
    const auto fill = [&](std::vector<Codebook>& books) {
        for (auto& cb : books) {
            Matrix entries(cb.size(), cb.dim());
            for (double& v : entries.data()) v = binio::read_f64(in, "codebook entries");
            if (!entries.all_finite()) throw FormatError("codebook entries are not finite");
            cb = Codebook(std::move(entries));
        }
    };
    if (auto* r = std::get_if<RvqQuantizer>(&q)) {
        fill(r->stages);
    } else {
        fill(std::get<PvqQuantizer>(q).groups);
    }
    return q;
}

}  // namespace cindep
