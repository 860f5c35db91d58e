// Acceptance gate: one PASS/FAIL line per criterion. Arguments select criteria
// by number; with none, all run. Exit status is 1 if any selected one fails.

#include "cindep/errors.hpp"
#include "cindep/infotheory.hpp"
#include "cindep/io.hpp"
#include "cindep/kernels.hpp"
#include "cindep/mmd.hpp"
#include "cindep/patterns.hpp"
#include "cindep/quantizers.hpp"
#include "cindep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace cindep;

namespace {

// Pinned tolerances and budgets.
constexpr double kOracleTol = 1e-12;
constexpr double kOracleBudget = 1.0;
constexpr double kUnbiasedSe = 3.0;
constexpr double kUnbiasedBudget = 60.0;
constexpr double kDiscriminationSe = 5.0;
constexpr double kGaussianGradTol = 1e-6;
constexpr double kLinearGradTol = 1e-8;
constexpr double kGradBudget = 30.0;
constexpr double kDuplicateRatio = 100.0;
constexpr double kDuplicateTol = 1.0;
constexpr double kIndependentRatio = 0.5;
constexpr double kInfoBudget = 30.0;
constexpr double kShuffleRatio = 0.5;
constexpr double kSweepRecTol = 0.10;
constexpr double kSweepBudget = 15.0 * 60.0;
constexpr double kDelaySe = 5.0;
constexpr double kDelayFactor = 2.0;
constexpr double kDelayBudget = 120.0;
constexpr double kResidualTol = 1e-12;
constexpr double kStructuralBudget = 120.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double shift = 0.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    for (std::size_t r = 0; r < rows; ++r) m(r, 0) += shift;
    return m;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

double sd_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

// -- 1 ----------------------------------------------------------------------

// Kernels written out from their definitions, independent of the library.
double oracle_kernel(int kind, const double* x, const double* y, std::size_t d) {
    double sq = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        sq += (x[i] - y[i]) * (x[i] - y[i]);
        dot += x[i] * y[i];
    }
    switch (kind) {
        case 0: {
            double k = 0.0;
            for (double r : {0.1, 1.0, 5.0, 10.0, 20.0, 50.0}) k += std::exp(-sq / (2 * r * r));
            return k;
        }
        case 1: return 1.0 / (1.0 + sq / 144.0);
        case 2: return dot;
        default: return dot * dot;
    }
}

double oracle_mmd(int kind, const Matrix& z, const Matrix& zb) {
    const std::size_t S = z.rows(), D = z.cols();
    double within = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = 0; j < S; ++j) {
            if (i != j) {
                within += oracle_kernel(kind, z.row(i).data(), z.row(j).data(), D);
                within += oracle_kernel(kind, zb.row(i).data(), zb.row(j).data(), D);
            }
            cross += oracle_kernel(kind, z.row(i).data(), zb.row(j).data(), D);
        }
    }
    return within / (S * (S - 1.0)) - 2.0 * cross / (double(S) * S);
}

Outcome estimator_correctness() {
    const KernelSpec kernels[] = {KernelSpec::default_gaussian(), KernelSpec::squared_inverse(12),
                                  KernelSpec::linear(), KernelSpec::quadratic()};
    SeededRng rng(101);
    double worst = 0.0;
    int cases = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t S = 2 + rng.uniform_index(7);
        const std::size_t D = 1 + rng.uniform_index(4);
        const Matrix z = gaussian_matrix(rng, S, D);
        const Matrix zb = gaussian_matrix(rng, S, D, 0.5);
        for (int k = 0; k < 4; ++k) {
            const double lib = mmd_unbiased(kernels[k], z, zb).value;
            const double ref = oracle_mmd(k, z, zb);
            worst = std::max(worst, std::abs(lib - ref) / std::max(1.0, std::abs(ref)));
            ++cases;
        }
    }
    return {worst <= kOracleTol,
            fmt("%d cases, max deviation %.2e (tol %.0e)", cases, worst, kOracleTol)};
}

// -- 2, 3 -------------------------------------------------------------------

Outcome unbiasedness() {
    const KernelSpec k = KernelSpec::default_gaussian();
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        SeededRng rng(seed);
        const Matrix z = gaussian_matrix(rng, 256, 4);
        const Matrix zb = gaussian_matrix(rng, 256, 4);
        v.push_back(mmd_unbiased(k, z, zb).value);
    }
    const double m = mean_of(v), se = sd_of(v) / std::sqrt(v.size());
    return {std::abs(m) <= kUnbiasedSe * se,
            fmt("mean %.3e, SE %.3e, |mean|/SE %.2f (limit %.0f) over 1000 seeds", m, se,
                std::abs(m) / se, kUnbiasedSe)};
}

Outcome discrimination() {
    const KernelSpec k = KernelSpec::default_gaussian();
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SeededRng rng(5000 + seed);
        const Matrix z = gaussian_matrix(rng, 256, 4);
        const Matrix zb = gaussian_matrix(rng, 256, 4, 1.0);  // |mu| = 1
        v.push_back(mmd_unbiased(k, z, zb).value);
    }
    // Single-estimate criterion: the seed-to-seed standard deviation, not the
    // standard error of the mean, is what a lone estimate must clear.
    const double m = mean_of(v), sd = sd_of(v);
    const double lowest = *std::min_element(v.begin(), v.end());
    return {m >= kDiscriminationSe * sd && lowest > 0.0,
            fmt("mean %.4f, seed sd %.4f, ratio %.1f (limit %.0f), min %.4f", m, sd, m / sd,
                kDiscriminationSe, lowest)};
}

// -- 4 ----------------------------------------------------------------------

double fd_relative_error(const KernelSpec& k, SeededRng& rng) {
    const std::size_t S = 6, D = 3;
    Matrix z = gaussian_matrix(rng, S, D), zb = gaussian_matrix(rng, S, D, 0.3);
    const MmdGradient g = mmd_grad(k, z, zb);
    double worst = 0.0, scale = 0.0;
    const double h = 1e-5;
    for (int which = 0; which < 2; ++which) {
        Matrix& m = which == 0 ? z : zb;
        const Matrix& an = which == 0 ? g.grad_z : g.grad_zbar;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double keep = m.data()[i];
            m.data()[i] = keep + h;
            const double up = mmd_unbiased(k, z, zb).value;
            m.data()[i] = keep - h;
            const double down = mmd_unbiased(k, z, zb).value;
            m.data()[i] = keep;
            const double num = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(num - an.data()[i]));
            scale = std::max(scale, std::abs(num));
        }
    }
    return worst / scale;
}

Outcome gradient_fidelity() {
    SeededRng rng(7);
    double gauss = 0.0, lin = 0.0;
    for (int t = 0; t < 20; ++t) {
        gauss = std::max(gauss, fd_relative_error(KernelSpec::default_gaussian(), rng));
        lin = std::max(lin, fd_relative_error(KernelSpec::linear(), rng));
    }
    double gc_gauss = 0.0, gc_lin = 0.0;
    for (auto scheme : {SchemeTag::Rvq, SchemeTag::Pvq, SchemeTag::PvqDropout}) {
        ToyCodecConfig c;
        c.input_dim = 3;
        c.K = 2;
        c.M = 4;
        c.N = 4;
        c.scheme = scheme;
        c.lambda_inde = 10.0;
        c.batch_size = 2;
        c.segment_length = 8;
        c.data.latent_rank = 2;
        c.seed = 3;
        gc_gauss = std::max(gc_gauss, grad_check(c));
        c.kernel = KernelSpec::linear();
        gc_lin = std::max(gc_lin, grad_check(c));
    }
    const bool ok = gauss <= kGaussianGradTol && gc_gauss <= kGaussianGradTol &&
                    lin <= kLinearGradTol && gc_lin <= kLinearGradTol;
    return {ok, fmt("mmd_grad gauss %.1e lin %.1e; grad_check gauss %.1e lin %.1e (tol %.0e / %.0e)",
                    gauss, lin, gc_gauss, gc_lin, kGaussianGradTol, kLinearGradTol)};
}

// -- 5, 6 -------------------------------------------------------------------

CodeGrid uniform_grid(std::size_t S, std::size_t K, std::uint32_t M, SeededRng& rng,
                      bool duplicate) {
    CodeGrid g(1, S, K, M);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < K; ++k) {
            g.at(0, s, k) = duplicate && k > 0 ? g.at(0, s, 0)
                                               : static_cast<std::uint32_t>(rng.uniform_index(M));
        }
    }
    return g;
}

Outcome information_exactness() {
    SeededRng rng(11);
    const CodeGrid dup = uniform_grid(100000, 2, 4, rng, true);
    const double d = tc_ratio(dup, 1, rng).ratio_percent;
    const CodeGrid ind = uniform_grid(100000, 4, 4, rng, false);
    const double i = tc_ratio(ind, 6, rng).ratio_percent;
    return {std::abs(d - kDuplicateRatio) <= kDuplicateTol && i <= kIndependentRatio,
            fmt("duplicated %.3f%% (want 100 +- %.0f), independent K=4 %.4f%% (limit %.1f)", d,
                kDuplicateTol, i, kIndependentRatio)};
}

Outcome shuffle_efficacy() {
    SeededRng rng(12);
    constexpr std::uint32_t M = 8;
    const CodeGrid dep = uniform_grid(10000, 2, M, rng, true);
    const TcReport before = tc_ratio(dep, 1, rng);

    // Tokens ride through the shuffle as one-dimensional codes.
    LatentBatch z(10000, 2, 1);
    for (std::size_t s = 0; s < 10000; ++s) {
        for (std::size_t k = 0; k < 2; ++k) z.code(s, k)[0] = dep.at(0, s, k);
    }
    const LatentBatch zs = shuffle_factorized(z, rng);
    CodeGrid after(1, 10000, 2, M);
    for (std::size_t s = 0; s < 10000; ++s) {
        for (std::size_t k = 0; k < 2; ++k) {
            after.at(0, s, k) = static_cast<std::uint32_t>(zs.code(s, k)[0]);
        }
    }
    const TcReport shuffled = tc_ratio(after, 1, rng);
    const bool was_full = std::abs(before.tc_nats - std::log(double(M))) < 0.01;
    return {was_full && shuffled.ratio_percent <= kShuffleRatio,
            fmt("TC %.4f nats (log M = %.4f) -> ratio %.4f%% after shuffle (limit %.1f)",
                before.tc_nats, std::log(double(M)), shuffled.ratio_percent, kShuffleRatio)};
}

// -- 7 ----------------------------------------------------------------------

unsigned threads_from_env() {
    const char* env = std::getenv("CINDEP_THREADS");
    return env ? std::max(1, std::atoi(env)) : 1;
}

Outcome sweep_trend() {
    const ToyCodecConfig cfg;  // the shipped defaults
    const auto rows = sweep_weights(cfg, {0.0, 10.0, 1000.0}, threads_from_env());
    const bool mmd_down = rows[0].mmd > rows[1].mmd && rows[1].mmd > rows[2].mmd;
    const bool tc_down = rows[2].tc_ratio_percent < rows[0].tc_ratio_percent;
    // Every weighted run must land within the tolerance of the unweighted one, either way.
    double rec_change = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double c = (rows[i].rec - rows[0].rec) / rows[0].rec;
        if (std::abs(c) > std::abs(rec_change)) rec_change = c;
    }
    const bool rec_ok = std::abs(rec_change) <= kSweepRecTol;
    std::string detail;
    for (const auto& r : rows) {
        detail += fmt("[lambda %g: mmd %.3e tc %.2f%% rec %.4f] ", r.lambda, r.mmd,
                      r.tc_ratio_percent, r.rec);
    }
    detail += fmt("worst rec change %+.1f%% (limit +-%.0f%%)", 100 * rec_change, 100 * kSweepRecTol);
    return {mmd_down && tc_down && rec_ok, detail};
}

// -- 8 ----------------------------------------------------------------------

// Codebook 1 at frame t copies codebook 0 at frame t+1; codebook 0 is an AR(1)
// sequence, so the unaligned pairing still sees some correlation.
LatentBatch shifted_copy(std::size_t B, std::size_t T, SeededRng& rng) {
    constexpr std::size_t N = 2;
    constexpr double rho = 0.5;
    LatentBatch z(B * T, 2, N);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> prev(N);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                const double v = t == 0 ? rng.normal()
                                        : rho * prev[n] + std::sqrt(1 - rho * rho) * rng.normal();
                z.code(b * T + t, 0)[n] = v;
                prev[n] = v;
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                z.code(b * T + t, 1)[n] = t + 1 < T ? z.code(b * T + t + 1, 0)[n] : rng.normal();
            }
        }
    }
    return z;
}

Outcome delay_matching() {
    constexpr std::size_t B = 8, T = 64;
    std::vector<double> delayed, parallel;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        SeededRng rng(900 + seed);
        const LatentBatch z = shifted_copy(B, T, rng);
        MmdConfig cfg;
        cfg.seed = seed;
        cfg.apply_delay = true;
        delayed.push_back(independence_loss(z, T, cfg, false).report.value);
        cfg.apply_delay = false;
        parallel.push_back(independence_loss(z, T, cfg, false).report.value);
    }
    const double md = mean_of(delayed), sd = sd_of(delayed), mp = mean_of(parallel);
    return {md >= kDelaySe * sd && kDelayFactor * mp <= md,
            fmt("delay-matched %.4f (seed sd %.4f, ratio %.1f, limit %.0f); parallel %.4f, "
                "delay/parallel %.1f (limit %.0f)",
                md, sd, md / sd, kDelaySe, mp, md / mp, kDelayFactor)};
}

// -- 9 ----------------------------------------------------------------------

Outcome structural_identities() {
    SeededRng rng(31);
    std::vector<std::string> failures;

    // Codes sum to the reconstruction and the residual closes the gap.
    double residual_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        RvqQuantizer q;
        for (int k = 0; k < 4; ++k) q.stages.emplace_back(gaussian_matrix(rng, 16, 5));
        const Matrix x = gaussian_matrix(rng, 64, 5);
        const QuantizeResult r = rvq_encode(q, x);
        for (std::size_t s = 0; s < 64; ++s) {
            for (std::size_t n = 0; n < 5; ++n) {
                double sum = 0.0;
                for (std::size_t k = 0; k < 4; ++k) sum += r.codes.code(s, k)[n];
                residual_err = std::max(residual_err, std::abs(sum - r.reconstruction(s, n)));
                residual_err = std::max(
                    residual_err, std::abs(r.reconstruction(s, n) + r.residual(s, n) - x(s, n)));
            }
        }
    }
    if (residual_err > kResidualTol) failures.push_back(fmt("residual %.1e", residual_err));

    // Pattern apply/invert through both file encodings.
    bool patterns_ok = true;
    for (int t = 0; t < 30; ++t) {
        const std::size_t T = 1 + rng.uniform_index(50), K = 1 + rng.uniform_index(6);
        CodeGrid g = uniform_grid(T, K, static_cast<std::uint32_t>(2 + rng.uniform_index(100)), rng,
                                  false);
        for (auto kind : {PatternKind::Parallel, PatternKind::Delay, PatternKind::Flatten}) {
            for (auto f : {FileFormat::Csv, FileFormat::Binary}) {
                std::stringstream a, b, c;
                write_tokens(a, tokens_from_grid(g), f);
                write_tokens(b, tokens_from_patterned(apply_pattern(g, kind)), f);
                const TokenFile back = read_tokens(b);
                write_tokens(c, tokens_from_grid(invert_pattern(patterned_from_tokens(back))), f);
                patterns_ok = patterns_ok && a.str() == c.str();
            }
        }
    }
    if (!patterns_ok) failures.push_back("pattern round trip");

    // Latent and quantizer files.
    LatentBatch z(33, 3, 4);
    for (double& v : z.data()) v = rng.normal();
    bool files_ok = true;
    for (auto f : {FileFormat::Csv, FileFormat::Binary}) {
        std::stringstream a, b;
        write_latents(a, z, f);
        const LatentBatch back = read_latents(a);
        write_latents(b, back, f);
        files_ok = files_ok && back == z;
    }
    PvqQuantizer pq;
    for (int g = 0; g < 3; ++g) pq.groups.emplace_back(gaussian_matrix(rng, 8, 2));
    std::stringstream qa, qb;
    write_quantizer(qa, pq);
    write_quantizer(qb, read_quantizer(qa));
    files_ok = files_ok && qa.str() == qb.str();
    if (!files_ok) failures.push_back("file round trip");

    // Deterministic re-runs.
    ToyCodecConfig c;
    c.input_dim = 4;
    c.K = 2;
    c.M = 8;
    c.N = 4;
    c.scheme = SchemeTag::PvqDropout;
    c.lambda_inde = 5.0;
    c.batch_size = 8;
    c.segment_length = 8;
    c.steps = 25;
    c.eval_frames = 256;
    c.eval_mmd_batches = 2;
    c.tc_pairs = 1;
    std::stringstream ra, rb;
    write_train_csv(ra, train_toy(c));
    write_train_csv(rb, train_toy(c));
    MmdConfig mc;
    mc.seed = 4;
    mc.apply_delay = true;
    const double m1 = independence_loss(z, 11, mc, false).report.value;
    const double m2 = independence_loss(z, 11, mc, false).report.value;
    if (ra.str() != rb.str() || std::memcmp(&m1, &m2, sizeof m1) != 0) {
        failures.push_back("re-run differs");
    }

    std::string detail = fmt("residual %.1e (tol %.0e), pattern/file round trips, re-runs",
                             residual_err, kResidualTol);
    for (const auto& f : failures) detail += "; FAILED " + f;
    return {failures.empty(), detail};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "estimator correctness", kOracleBudget, estimator_correctness},
        {2, "unbiasedness", kUnbiasedBudget, unbiasedness},
        {3, "discrimination", 0.0, discrimination},
        {4, "gradient fidelity", kGradBudget, gradient_fidelity},
        {5, "information-theory exactness", kInfoBudget, information_exactness},
        {6, "shuffle efficacy", 0.0, shuffle_efficacy},
        {7, "weight sweep trend", kSweepBudget, sweep_trend},
        {8, "delay matching", kDelayBudget, delay_matching},
        {9, "structural identities", kStructuralBudget, structural_identities},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0.0 || secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        std::string timing = fmt("%.2fs", secs);
        if (c.budget_s > 0.0) timing += fmt(" (budget %.0fs)", c.budget_s);
        std::printf("%s  %d. %s: %s; %s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    timing.c_str());
        std::fflush(stdout);
        failed += pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
