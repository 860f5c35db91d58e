#include "cindep/trainer.hpp"

#include "cindep/errors.hpp"
#include "cindep/patterns.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

namespace cindep {

Matrix mixing_matrix(const SyntheticDataSpec& spec, std::size_t input_dim) {
    const std::size_t r = spec.latent_rank;
    if (r == 0 || r > input_dim) {
        throw ArgumentError("latent_rank must be in [1, input_dim], got " + std::to_string(r));
    }
    Matrix a(input_dim, r);
    if (spec.identity_mixing) {
        if (r != input_dim) throw ArgumentError("identity mixing needs latent_rank == input_dim");
        for (std::size_t i = 0; i < r; ++i) a(i, i) = 1.0;
        return a;
    }
    SeededRng rng(spec.mixing_seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(r));
    for (double& v : a.data()) v = scale * rng.normal();
    return a;
}

std::vector<Matrix> generate_synthetic(const SyntheticDataSpec& spec, std::size_t input_dim,
                                       std::size_t batch, std::size_t steps, SeededRng& rng,
                                       std::size_t count) {
    if (!(spec.rho >= 0.0 && spec.rho < 1.0)) throw ArgumentError("rho must lie in [0, 1)");
    if (!(spec.noise_scale >= 0.0)) throw ArgumentError("noise_scale must be non-negative");
    const Matrix a = mixing_matrix(spec, input_dim);
    const std::size_t r = spec.latent_rank;
    const double innovation = std::sqrt(1.0 - spec.rho * spec.rho);

    std::vector<Matrix> out;
    out.reserve(count);
    std::vector<double> u(r);
    for (std::size_t c = 0; c < count; ++c) {
        Matrix x(batch * steps, input_dim);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < steps; ++t) {
                for (std::size_t i = 0; i < r; ++i) {
                    u[i] = t == 0 ? rng.normal() : spec.rho * u[i] + innovation * rng.normal();
                }
                auto row = x.row(b * steps + t);
                for (std::size_t d = 0; d < input_dim; ++d) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < r; ++i) acc += a(d, i) * u[i];
                    row[d] = acc;
                }
                if (spec.noise_scale > 0.0) {
                    for (double& v : row) v += spec.noise_scale * rng.normal();
                }
            }
        }
        out.push_back(std::move(x));
    }
    return out;
}

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ArgumentError(field + ": " + what);
}

void validate_shape(const ToyCodecConfig& c) {
    require(c.input_dim > 0, "input_dim", "must be positive");
    require(c.K > 0, "K", "must be positive");
    require(c.M > 0, "M", "must be positive");
    require(c.N > 0, "N", "must be positive");
    require(c.scheme == SchemeTag::Rvq || c.N % c.K == 0, "N", "must be divisible by K for PVQ");
    require(c.lambda_inde >= 0.0 && std::isfinite(c.lambda_inde), "lambda_inde", "must be >= 0");
    require(c.lambda_commit >= 0.0 && std::isfinite(c.lambda_commit), "lambda_commit",
            "must be >= 0");
    require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), "learning_rate",
            "must be positive");
    require(c.batch_size > 0, "batch_size", "must be positive");
    require(c.segment_length > 0, "segment_length", "must be positive");
    require(!c.delay_enabled() || c.segment_length >= c.K, "segment_length",
            "must be >= K when apply_delay is on");
    require(c.data.latent_rank > 0 && c.data.latent_rank <= c.input_dim, "latent_rank",
            "must be in [1, input_dim]");
    require(!c.data.identity_mixing || c.data.latent_rank == c.input_dim, "identity_mixing",
            "needs latent_rank == input_dim");
    require(c.data.rho >= 0.0 && c.data.rho < 1.0, "rho", "must lie in [0, 1)");
    require(c.data.noise_scale >= 0.0, "noise_scale", "must be >= 0");
    require(c.ema.decay >= 0.0 && c.ema.decay < 1.0, "ema_decay", "must lie in [0, 1)");
}

}  // namespace

void ToyCodecConfig::validate() const {
    validate_shape(*this);
    require(frames_per_batch() >= 64, "batch_size", "batch_size * segment_length must be >= 64");
    require(data_batches > 0, "data_batches", "must be positive");
    require(eval_interval > 0, "eval_interval", "must be positive");
    require(eval_mmd_batches > 0, "eval_mmd_batches", "must be positive");
    require(eval_frames >= frames_per_batch() * eval_mmd_batches, "eval_frames",
            "must cover eval_mmd_batches batches");
    require(K < 2 || (tc_pairs >= 1 && tc_pairs <= K * (K - 1) / 2), "tc_pairs",
            "must be in [1, K(K-1)/2]");
}

// ---------------------------------------------------------------------------
// Config text form

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw FormatError("config key '" + key + "': cannot parse '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
    if (text == "0" || text == "false" || text == "off" || text == "no") return false;
    throw FormatError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

SchemeTag parse_scheme(const std::string& key, const std::string& text) {
    if (text == "rvq") return SchemeTag::Rvq;
    if (text == "pvq") return SchemeTag::Pvq;
    if (text == "pvq-dropout") return SchemeTag::PvqDropout;
    throw FormatError("config key '" + key + "': unknown scheme '" + text + "'");
}

std::string scheme_text(SchemeTag s) {
    switch (s) {
        case SchemeTag::Rvq: return "rvq";
        case SchemeTag::Pvq: return "pvq";
        case SchemeTag::PvqDropout: return "pvq-dropout";
    }
    return "rvq";
}

std::string real_text(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

using Setter = std::function<void(ToyCodecConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& config_setters() {
    static const std::vector<std::pair<std::string, Setter>> setters = {
        {"input_dim", [](auto& c, auto& k, auto& v) { c.input_dim = parse_number<std::size_t>(k, v); }},
        {"K", [](auto& c, auto& k, auto& v) { c.K = parse_number<std::size_t>(k, v); }},
        {"M", [](auto& c, auto& k, auto& v) { c.M = parse_number<std::size_t>(k, v); }},
        {"N", [](auto& c, auto& k, auto& v) { c.N = parse_number<std::size_t>(k, v); }},
        {"scheme", [](auto& c, auto& k, auto& v) { c.scheme = parse_scheme(k, v); }},
        {"lambda_inde", [](auto& c, auto& k, auto& v) { c.lambda_inde = parse_number<double>(k, v); }},
        {"lambda_commit",
         [](auto& c, auto& k, auto& v) { c.lambda_commit = parse_number<double>(k, v); }},
        {"kernel",
         [](auto& c, auto& k, auto& v) {
             try {
                 c.kernel = KernelSpec::parse(v);
             } catch (const Error& e) {
                 throw FormatError("config key '" + k + "': " + e.what());
             }
         }},
        {"apply_delay",
         [](auto& c, auto& k, auto& v) {
             if (v == "auto") {
                 c.apply_delay.reset();
             } else {
                 c.apply_delay = parse_bool(k, v);
             }
         }},
        {"sampling_mode",
         [](auto& c, auto& k, auto& v) {
             if (v == "coupled") {
                 c.sampling_mode = SamplingMode::Coupled;
             } else if (v == "split") {
                 c.sampling_mode = SamplingMode::Split;
             } else {
                 throw FormatError("config key '" + k + "': expected coupled or split, got '" + v + "'");
             }
         }},
        {"learning_rate",
         [](auto& c, auto& k, auto& v) { c.learning_rate = parse_number<double>(k, v); }},
        {"steps", [](auto& c, auto& k, auto& v) { c.steps = parse_number<std::size_t>(k, v); }},
        {"batch_size",
         [](auto& c, auto& k, auto& v) { c.batch_size = parse_number<std::size_t>(k, v); }},
        {"segment_length",
         [](auto& c, auto& k, auto& v) { c.segment_length = parse_number<std::size_t>(k, v); }},
        {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
        {"latent_rank",
         [](auto& c, auto& k, auto& v) { c.data.latent_rank = parse_number<std::size_t>(k, v); }},
        {"mixing_seed",
         [](auto& c, auto& k, auto& v) { c.data.mixing_seed = parse_number<std::uint64_t>(k, v); }},
        {"rho", [](auto& c, auto& k, auto& v) { c.data.rho = parse_number<double>(k, v); }},
        {"noise_scale",
         [](auto& c, auto& k, auto& v) { c.data.noise_scale = parse_number<double>(k, v); }},
        {"identity_mixing",
         [](auto& c, auto& k, auto& v) { c.data.identity_mixing = parse_bool(k, v); }},
        {"ema_decay", [](auto& c, auto& k, auto& v) { c.ema.decay = parse_number<double>(k, v); }},
        {"ema_epsilon",
         [](auto& c, auto& k, auto& v) { c.ema.epsilon = parse_number<double>(k, v); }},
        {"dead_threshold",
         [](auto& c, auto& k, auto& v) { c.ema.dead_threshold = parse_number<double>(k, v); }},
        {"dead_window",
         [](auto& c, auto& k, auto& v) { c.ema.dead_window = parse_number<std::size_t>(k, v); }},
        {"data_batches",
         [](auto& c, auto& k, auto& v) { c.data_batches = parse_number<std::size_t>(k, v); }},
        {"eval_interval",
         [](auto& c, auto& k, auto& v) { c.eval_interval = parse_number<std::size_t>(k, v); }},
        {"eval_frames",
         [](auto& c, auto& k, auto& v) { c.eval_frames = parse_number<std::size_t>(k, v); }},
        {"eval_mmd_batches",
         [](auto& c, auto& k, auto& v) { c.eval_mmd_batches = parse_number<std::size_t>(k, v); }},
        {"tc_pairs", [](auto& c, auto& k, auto& v) { c.tc_pairs = parse_number<std::size_t>(k, v); }},
    };
    return setters;
}

}  // namespace

ToyCodecConfig parse_config(std::istream& in) {
    ToyCodecConfig cfg;
    const auto& setters = config_setters();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const auto it = std::find_if(setters.begin(), setters.end(),
                                     [&](const auto& s) { return s.first == key; });
        if (it == setters.end()) throw FormatError("unknown config key '" + key + "'");
        it->second(cfg, key, value);
    }
    return cfg;
}

ToyCodecConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file " + path);
    return parse_config(in);
}

std::string format_config(const ToyCodecConfig& c) {
    std::ostringstream o;
    o << "input_dim=" << c.input_dim << "\nK=" << c.K << "\nM=" << c.M << "\nN=" << c.N
      << "\nscheme=" << scheme_text(c.scheme) << "\nlambda_inde=" << real_text(c.lambda_inde)
      << "\nlambda_commit=" << real_text(c.lambda_commit) << "\nkernel=" << c.kernel.to_string()
      << "\napply_delay=" << (c.apply_delay ? (*c.apply_delay ? "true" : "false") : "auto")
      << "\nsampling_mode=" << sampling_mode_name(c.sampling_mode)
      << "\nlearning_rate=" << real_text(c.learning_rate) << "\nsteps=" << c.steps
      << "\nbatch_size=" << c.batch_size << "\nsegment_length=" << c.segment_length
      << "\nseed=" << c.seed << "\nlatent_rank=" << c.data.latent_rank
      << "\nmixing_seed=" << c.data.mixing_seed << "\nrho=" << real_text(c.data.rho)
      << "\nnoise_scale=" << real_text(c.data.noise_scale)
      << "\nidentity_mixing=" << (c.data.identity_mixing ? "true" : "false")
      << "\nema_decay=" << real_text(c.ema.decay) << "\nema_epsilon=" << real_text(c.ema.epsilon)
      << "\ndead_threshold=" << real_text(c.ema.dead_threshold)
      << "\ndead_window=" << c.ema.dead_window << "\ndata_batches=" << c.data_batches
      << "\neval_interval=" << c.eval_interval << "\neval_frames=" << c.eval_frames
      << "\neval_mmd_batches=" << c.eval_mmd_batches << "\ntc_pairs=" << c.tc_pairs << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Model

namespace {

Matrix encode_affine(const ToyModel& m, const Matrix& x) {
    const std::size_t N = m.enc_w.rows();
    const std::size_t D = m.enc_w.cols();
    Matrix e(x.rows(), N);
    for (std::size_t s = 0; s < x.rows(); ++s) {
        const auto xs = x.row(s);
        auto es = e.row(s);
        for (std::size_t n = 0; n < N; ++n) {
            double acc = m.enc_b[n];
            for (std::size_t d = 0; d < D; ++d) acc += m.enc_w(n, d) * xs[d];
            es[n] = acc;
        }
    }
    return e;
}

Matrix decode_affine(const ToyModel& m, const Matrix& z) {
    const std::size_t D = m.dec_w.rows();
    const std::size_t N = m.dec_w.cols();
    Matrix x(z.rows(), D);
    for (std::size_t s = 0; s < z.rows(); ++s) {
        const auto zs = z.row(s);
        auto xs = x.row(s);
        for (std::size_t d = 0; d < D; ++d) {
            double acc = m.dec_b[d];
            for (std::size_t n = 0; n < N; ++n) acc += m.dec_w(d, n) * zs[n];
            xs[d] = acc;
        }
    }
    return x;
}

// Quantization of one batch, held fixed while losses and gradients are formed.
struct Frozen {
    QuantizeResult q;
    Matrix selected;                    // every stage's selection, dropout ignored
    std::vector<Matrix> tables;         // per codebook, entries embedded in R^N
    std::vector<std::uint32_t> lookup;  // S x K rows into `tables`
    std::size_t group_dim = 0;          // 0 for RVQ
};

Frozen quantize(const Quantizer& quantizer, const Matrix& e, SeededRng* dropout_rng) {
    Frozen f;
    if (const auto* r = std::get_if<RvqQuantizer>(&quantizer)) {
        f.q = rvq_encode(*r, e);
        f.selected = f.q.reconstruction;
        for (const auto& cb : r->stages) f.tables.push_back(cb.entries);
        f.lookup = f.q.indices;
        return f;
    }
    const auto& p = std::get<PvqQuantizer>(quantizer);
    f.q = dropout_rng ? pvq_encode(p, e, *dropout_rng) : pvq_encode_depth(p, e, p.codebooks());
    f.selected = pvq_decode(p, f.q.indices);
    const std::size_t K = p.codebooks();
    const std::size_t G = p.group_dim();
    const std::size_t M = p.groups.front().size();
    f.group_dim = G;
    // Row M of each table is the zero code that dropped stages contribute.
    for (std::size_t k = 0; k < K; ++k) {
        Matrix t(M + 1, p.dim());
        for (std::size_t m = 0; m < M; ++m) {
            const auto src = p.groups[k].entries.row(m);
            std::copy(src.begin(), src.end(), t.row(m).begin() + k * G);
        }
        f.tables.push_back(std::move(t));
    }
    f.lookup = f.q.indices;
    for (std::size_t s = 0; s < e.rows(); ++s) {
        for (std::size_t k = f.q.active_stages; k < K; ++k) {
            f.lookup[s * K + k] = static_cast<std::uint32_t>(M);
        }
    }
    return f;
}

// Coordinates of the encoder output that reach code k under straight-through.
struct CodeSpan {
    std::size_t begin;
    std::size_t width;
};

CodeSpan code_span(const Frozen& f, std::size_t k, std::size_t N) {
    if (f.group_dim == 0) return {0, N};
    return {k * f.group_dim, f.group_dim};
}

MmdConfig mmd_config(const ToyCodecConfig& cfg) {
    MmdConfig m;
    m.kernel = cfg.kernel;
    m.apply_delay = cfg.delay_enabled();
    m.mode = cfg.sampling_mode;
    m.seed = cfg.seed;
    return m;
}

double mean_sq(const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

ToyGradients evaluate(const ToyModel& model, const Matrix& x, const Matrix& e, const Frozen& f,
                      const ToyCodecConfig& cfg, SeededRng* perm_rng, bool with_grad) {
    const std::size_t S = x.rows();
    const std::size_t D = x.cols();
    const std::size_t N = e.cols();
    ToyGradients out;
    const Matrix& dec_in = f.q.reconstruction;
    const Matrix xhat = decode_affine(model, dec_in);
    out.losses.rec = mean_sq(xhat, x);
    out.losses.commit = mean_sq(e, f.selected);

    IndependenceLoss inde;
    const bool inde_grad = with_grad && cfg.lambda_inde > 0.0;
    if (perm_rng) {
        inde = independence_loss_indexed(f.lookup, f.tables, cfg.segment_length, mmd_config(cfg),
                                         *perm_rng, inde_grad);
        out.losses.inde = inde.report.value;
        out.losses.inde_measured = true;
    }
    out.losses.total =
        out.losses.rec + cfg.lambda_commit * out.losses.commit + cfg.lambda_inde * out.losses.inde;
    if (!with_grad) return out;

    // Reconstruction path.
    Matrix g_xhat(S, D);
    const double rec_scale = 2.0 / static_cast<double>(S * D);
    for (std::size_t i = 0; i < g_xhat.size(); ++i) {
        g_xhat.data()[i] = rec_scale * (xhat.data()[i] - x.data()[i]);
    }
    out.dec_w = Matrix(D, N);
    out.dec_b.assign(D, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        const auto g = g_xhat.row(s);
        const auto z = dec_in.row(s);
        for (std::size_t d = 0; d < D; ++d) {
            out.dec_b[d] += g[d];
            for (std::size_t n = 0; n < N; ++n) out.dec_w(d, n) += g[d] * z[n];
        }
    }

    // Encoder-output gradient; quantization passes gradients straight through,
    // except into stages that dropout removed.
    Matrix g_e(S, N);
    const std::size_t active_width =
        f.group_dim == 0 ? N : f.group_dim * f.q.active_stages;
    for (std::size_t s = 0; s < S; ++s) {
        const auto g = g_xhat.row(s);
        auto ge = g_e.row(s);
        for (std::size_t n = 0; n < active_width; ++n) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += g[d] * model.dec_w(d, n);
            ge[n] = acc;
        }
    }
    const double commit_scale = cfg.lambda_commit * 2.0 / static_cast<double>(S * N);
    for (std::size_t i = 0; i < g_e.size(); ++i) {
        g_e.data()[i] += commit_scale * (e.data()[i] - f.selected.data()[i]);
    }
    if (inde_grad) {
        const std::size_t active = f.q.active_stages;
        for (std::size_t s = 0; s < S; ++s) {
            auto ge = g_e.row(s);
            for (std::size_t k = 0; k < active; ++k) {
                const auto span = code_span(f, k, N);
                const auto gc = inde.grad.code(s, k);
                for (std::size_t n = span.begin; n < span.begin + span.width; ++n) {
                    ge[n] += cfg.lambda_inde * gc[n];
                }
            }
        }
    }
    out.enc_w = Matrix(N, D);
    out.enc_b.assign(N, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        const auto g = g_e.row(s);
        const auto xs = x.row(s);
        for (std::size_t n = 0; n < N; ++n) {
            out.enc_b[n] += g[n];
            for (std::size_t d = 0; d < D; ++d) out.enc_w(n, d) += g[n] * xs[d];
        }
    }
    return out;
}

bool model_finite(const ToyModel& m) {
    const auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return m.enc_w.all_finite() && m.dec_w.all_finite() && finite(m.enc_b) && finite(m.dec_b);
}

void sgd(ToyModel& m, const ToyGradients& g, double lr) {
    const auto step = [lr](std::span<double> p, std::span<const double> d) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * d[i];
    };
    step(m.enc_w.data(), g.enc_w.data());
    step(m.enc_b, g.enc_b);
    step(m.dec_w.data(), g.dec_w.data());
    step(m.dec_b, g.dec_b);
}

bool losses_finite(const StepLosses& l) {
    return std::isfinite(l.rec) && std::isfinite(l.commit) && std::isfinite(l.inde) &&
           std::isfinite(l.total);
}

// Held-out metrics at full depth.
void final_metrics(const ToyModel& model, const ToyCodecConfig& cfg, const TrainingData& data,
                   TrainReport& report) {
    const std::size_t K = cfg.K;
    const std::size_t B = cfg.batch_size;
    const std::size_t T = cfg.segment_length;
    CodeGrid grid(B * data.eval.size(), T, K, static_cast<std::uint32_t>(cfg.M));
    std::vector<std::vector<bool>> used(K, std::vector<bool>(cfg.M, false));
    double rec = 0.0;
    double mmd = 0.0;
    std::size_t mmd_samples = 0;
    SeededRng perm_rng(cfg.seed);
    for (std::size_t i = 0; i < data.eval.size(); ++i) {
        const Matrix& x = data.eval[i];
        const Matrix e = encode_affine(model, x);
        const Frozen f = quantize(model.quantizer, e, nullptr);
        rec += mean_sq(decode_affine(model, f.q.reconstruction), x) / data.eval.size();
        std::copy(f.q.indices.begin(), f.q.indices.end(),
                  grid.indices.begin() + static_cast<std::ptrdiff_t>(i * x.rows() * K));
        for (std::size_t s = 0; s < x.rows(); ++s) {
            for (std::size_t k = 0; k < K; ++k) used[k][f.q.index(s, k)] = true;
        }
        if (i < cfg.eval_mmd_batches) {
            const auto loss =
                independence_loss_indexed(f.lookup, f.tables, T, mmd_config(cfg), perm_rng, false);
            mmd += loss.report.value / static_cast<double>(cfg.eval_mmd_batches);
            mmd_samples = loss.report.sample_count;
        }
    }
    report.final_rec = rec;
    report.final_mmd.value = mmd;
    report.final_mmd.sample_count = mmd_samples;
    report.final_mmd.kernel = cfg.kernel.to_string();
    report.final_mmd.seed = cfg.seed;
    report.final_mmd.delay = cfg.delay_enabled();
    report.final_mmd.mode = cfg.sampling_mode;
    report.usage.clear();
    for (const auto& u : used) {
        report.usage.push_back(static_cast<double>(std::count(u.begin(), u.end(), true)) /
                               static_cast<double>(cfg.M));
    }
    if (K >= 2) {
        // Measured on the same alignment the independence loss sees.
        const CodeGrid aligned = cfg.delay_enabled() ? delayed_grid(grid) : grid;
        SeededRng pair_rng(cfg.seed);
        report.final_tc = tc_ratio(aligned, cfg.tc_pairs, pair_rng);
    }
}

}  // namespace

ToyModel init_toy_model(const ToyCodecConfig& cfg, const Matrix& first_batch, SeededRng& rng) {
    const std::size_t D = cfg.input_dim;
    const std::size_t N = cfg.N;
    if (first_batch.cols() != D) {
        throw DimensionError("training frames have dimension " + std::to_string(first_batch.cols()) +
                             ", config says " + std::to_string(D));
    }
    ToyModel m;
    m.enc_w = Matrix(N, D);
    m.dec_w = Matrix(D, N);
    m.enc_b.assign(N, 0.0);
    m.dec_b.assign(D, 0.0);
    const double enc_scale = 1.0 / std::sqrt(static_cast<double>(D));
    const double dec_scale = 1.0 / std::sqrt(static_cast<double>(N));
    for (double& v : m.enc_w.data()) v = enc_scale * rng.normal();
    for (double& v : m.dec_w.data()) v = dec_scale * rng.normal();
    const Quantizer shape = make_quantizer(cfg.scheme, cfg.K, cfg.M, N);
    m.quantizer = init_quantizer_from_batch(shape, encode_affine(m, first_batch), rng);
    return m;
}

ToyGradients toy_gradients(const ToyModel& model, const Matrix& x, const ToyCodecConfig& cfg,
                           SeededRng& perm_rng, bool with_inde) {
    const Matrix e = encode_affine(model, x);
    const Frozen f = quantize(model.quantizer, e, nullptr);
    return evaluate(model, x, e, f, cfg, with_inde ? &perm_rng : nullptr, true);
}

TrainingData make_training_data(const ToyCodecConfig& cfg) {
    cfg.validate();
    SeededRng rng(cfg.seed);
    SeededRng train_rng(rng.split());
    SeededRng eval_rng(rng.split());
    TrainingData data;
    data.train = generate_synthetic(cfg.data, cfg.input_dim, cfg.batch_size, cfg.segment_length,
                                    train_rng, cfg.data_batches);
    const std::size_t eval_batches =
        std::max(cfg.eval_mmd_batches, (cfg.eval_frames + cfg.frames_per_batch() - 1) /
                                           cfg.frames_per_batch());
    data.eval = generate_synthetic(cfg.data, cfg.input_dim, cfg.batch_size, cfg.segment_length,
                                   eval_rng, eval_batches);
    return data;
}

TrainReport train_toy(const ToyCodecConfig& cfg, const TrainingData& data) {
    cfg.validate();
    if (data.train.empty() || data.eval.size() < cfg.eval_mmd_batches) {
        throw ArgumentError("training data holds too few batches");
    }
    for (const auto& set : {&data.train, &data.eval}) {
        for (const auto& b : *set) {
            if (b.rows() != cfg.frames_per_batch() || b.cols() != cfg.input_dim) {
                throw DimensionError("training batch shape does not match the config");
            }
        }
    }

    SeededRng master(cfg.seed);
    SeededRng init_rng(master.split());
    SeededRng dropout_rng(master.split());
    SeededRng mmd_rng(master.split());
    SeededRng ema_rng(master.split());

    TrainReport report;
    report.config = cfg;
    report.seed = cfg.seed;
    ToyModel model = init_toy_model(cfg, data.train.front(), init_rng);

    {
        SeededRng probe(cfg.seed);
        const Matrix& x = data.train.front();
        const Matrix e = encode_affine(model, x);
        report.initial = evaluate(model, x, e, quantize(model.quantizer, e, nullptr), cfg, &probe,
                                  false).losses;
        if (!losses_finite(report.initial)) throw DivergenceError(0, "non-finite initial loss");
    }

    double last_inde = report.initial.inde;
    report.curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Matrix& x = data.train[step % data.train.size()];
        const Matrix e = encode_affine(model, x);
        const Frozen f = quantize(model.quantizer, e, &dropout_rng);
        // Without the independence term the loss is only measured now and then;
        // it never reaches the gradient.
        const bool measure = cfg.lambda_inde > 0.0 || step % cfg.eval_interval == 0;
        ToyGradients g = evaluate(model, x, e, f, cfg, measure ? &mmd_rng : nullptr, true);
        if (measure) {
            last_inde = g.losses.inde;
        } else {
            g.losses.inde = last_inde;
        }
        g.losses.total =
            g.losses.rec + cfg.lambda_commit * g.losses.commit + cfg.lambda_inde * g.losses.inde;
        if (!losses_finite(g.losses)) throw DivergenceError(step + 1, "non-finite loss");
        sgd(model, g, cfg.learning_rate);
        if (!model_finite(model)) throw DivergenceError(step + 1, "non-finite parameters");
        update_codebooks(model.quantizer, e, cfg.ema, ema_rng);
        report.curve.push_back(g.losses);
    }

    final_metrics(model, cfg, data, report);
    if (!std::isfinite(report.final_rec) || !std::isfinite(report.final_mmd.value)) {
        throw DivergenceError(cfg.steps, "non-finite held-out metrics");
    }
    return report;
}

TrainReport train_toy(const ToyCodecConfig& cfg) {
    return train_toy(cfg, make_training_data(cfg));
}

std::vector<SweepRow> sweep_weights(const ToyCodecConfig& cfg, const std::vector<double>& lambdas,
                                    std::size_t threads) {
    if (lambdas.empty()) throw ArgumentError("sweep needs at least one lambda");
    if (!std::is_sorted(lambdas.begin(), lambdas.end())) {
        throw ArgumentError("sweep lambdas must be sorted ascending");
    }
    if (lambdas.front() != 0.0) throw ArgumentError("sweep lambdas must include 0");
    for (double l : lambdas) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw ArgumentError("sweep lambdas must be >= 0");
    }
    const TrainingData data = make_training_data(cfg);

    std::vector<SweepRow> rows(lambdas.size());
    std::vector<std::exception_ptr> errors(lambdas.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        for (std::size_t i = next++; i < lambdas.size(); i = next++) {
            try {
                ToyCodecConfig run = cfg;
                run.lambda_inde = lambdas[i];
                const auto report = train_toy(run, data);
                rows[i] = {lambdas[i], report.final_mmd.value, report.final_tc.ratio_percent,
                           report.final_rec};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::clamp<std::size_t>(threads, 1, lambdas.size());
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return rows;
}

double grad_check(const ToyCodecConfig& cfg) {
    validate_shape(cfg);
    const std::size_t S = cfg.frames_per_batch();
    if (cfg.input_dim > 6) throw ArgumentError("grad_check needs input_dim <= 6");
    if (S > 16) throw ArgumentError("grad_check needs batch_size * segment_length <= 16");

    SeededRng rng(cfg.seed);
    const Matrix x =
        generate_synthetic(cfg.data, cfg.input_dim, cfg.batch_size, cfg.segment_length, rng, 1)
            .front();
    ToyModel model = init_toy_model(cfg, x, rng);
    const Matrix e0 = encode_affine(model, x);
    const Frozen f = quantize(model.quantizer, e0, &rng);
    const std::uint64_t perm_seed = rng.split();
    const bool with_inde = cfg.lambda_inde > 0.0;
    const std::size_t N = cfg.N;
    const std::size_t K = cfg.K;

    SeededRng perm_rng(perm_seed);
    const ToyGradients analytic = evaluate(model, x, e0, f, cfg, with_inde ? &perm_rng : nullptr, true);

    // Straight-through surrogate: every quantized quantity moves with the encoder
    // output by its offset from e0, restricted to the coordinates it reads.
    const std::size_t active_width = f.group_dim == 0 ? N : f.group_dim * f.q.active_stages;
    const auto surrogate = [&](const ToyModel& m) {
        const Matrix e = encode_affine(m, x);
        Matrix dec_in = f.q.reconstruction;
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t n = 0; n < active_width; ++n) dec_in(s, n) += e(s, n) - e0(s, n);
        }
        double total = mean_sq(decode_affine(m, dec_in), x) + cfg.lambda_commit * mean_sq(e, f.selected);
        if (with_inde) {
            LatentBatch codes(S, K, N);
            for (std::size_t s = 0; s < S; ++s) {
                for (std::size_t k = 0; k < K; ++k) {
                    const auto src = f.tables[k].row(f.lookup[s * K + k]);
                    auto dst = codes.code(s, k);
                    std::copy(src.begin(), src.end(), dst.begin());
                    if (k >= f.q.active_stages) continue;
                    const auto span = code_span(f, k, N);
                    for (std::size_t n = span.begin; n < span.begin + span.width; ++n) {
                        dst[n] += e(s, n) - e0(s, n);
                    }
                }
            }
            SeededRng frozen(perm_seed);
            total += cfg.lambda_inde *
                     independence_loss(codes, cfg.segment_length, mmd_config(cfg), frozen, false)
                         .report.value;
        }
        return total;
    };

    const double h = 1e-5;
    double max_err = 0.0;
    double max_ref = 0.0;
    const auto probe = [&](std::span<double> params, std::span<const double> grads) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double up = surrogate(model);
            params[i] = keep - h;
            const double down = surrogate(model);
            params[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            max_err = std::max(max_err, std::abs(numeric - grads[i]));
            max_ref = std::max(max_ref, std::abs(numeric));
        }
    };
    probe(model.enc_w.data(), analytic.enc_w.data());
    probe(model.enc_b, analytic.enc_b);
    probe(model.dec_w.data(), analytic.dec_w.data());
    probe(model.dec_b, analytic.dec_b);
    return max_ref > 0.0 ? max_err / max_ref : max_err;
}

}  // namespace cindep
