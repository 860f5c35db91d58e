#include "cindep/cli.hpp"

#include "cindep/errors.hpp"
#include "cindep/infotheory.hpp"
#include "cindep/io.hpp"
#include "cindep/mmd.hpp"
#include "cindep/patterns.hpp"
#include "cindep/quantizers.hpp"
#include "cindep/trainer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <thread>

namespace cindep {

unsigned thread_budget() {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("CINDEP_THREADS");
    if (env == nullptr || *env == '\0') return hw;
    const std::string_view s(env);
    unsigned v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) {
        throw ArgumentError("CINDEP_THREADS must be a positive integer, got '" + std::string(s) + "'");
    }
    return v;
}

namespace {

// Writes to --out when given, else to the command's stdout.
void emit(const std::string& path, std::ostream& out,
          const std::function<void(std::ostream&)>& write) {
    if (path.empty() || path == "-") {
        write(out);
        return;
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw FormatError("cannot open '" + path + "' for writing");
    write(file);
    file.flush();
    if (!file) throw FormatError("write to '" + path + "' failed");
}

std::vector<double> parse_lambdas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0.0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
            throw ArgumentError("bad lambda '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) throw ArgumentError("no lambdas given");
    return out;
}

PatternKind pattern_flag(const std::string& name) {
    try {
        return parse_pattern(name);
    } catch (const FormatError& e) {
        throw ArgumentError(e.what());
    }
}

KernelSpec kernel_flag(const std::string& text) {
    try {
        return KernelSpec::parse(text);
    } catch (const FormatError& e) {
        throw ArgumentError(e.what());
    }
}

// A config file is input, so its bad values map to the input exit code.
ToyCodecConfig config_from(const std::string& path, std::optional<std::uint64_t> seed) {
    ToyCodecConfig cfg = path.empty() ? ToyCodecConfig{} : load_config(path);
    if (seed) cfg.seed = *seed;
    try {
        cfg.validate();
    } catch (const ArgumentError& e) {
        throw FormatError("config: " + std::string(e.what()));
    }
    return cfg;
}

struct AnalyzeArgs {
    std::string tokens, metric = "tc", out;
    std::size_t pairs = 5;
    std::uint64_t seed = 0;
    bool miller_madow = false;
    bool mean_of_ratios = false;
    bool pairs_given = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
    if (a.metric != "tc" && a.metric != "mi-profile") {
        throw ArgumentError("unknown metric '" + a.metric + "' (expected tc or mi-profile)");
    }
    if (a.metric == "tc" && a.pairs == 0) throw ArgumentError("--pairs must be at least 1");
    const CodeGrid grid = grid_from_tokens(load_tokens(a.tokens));
    if (grid.codebooks < 2) {
        throw ArgumentError("analysis needs at least 2 codebooks, file has " +
                            std::to_string(grid.codebooks));
    }
    if (a.metric == "tc") {
        InfoOptions opt;
        opt.miller_madow = a.miller_madow;
        opt.mean_of_ratios = a.mean_of_ratios;
        // The default pair count shrinks to what small K can offer; an explicit one does not.
        const std::size_t available = grid.codebooks * (grid.codebooks - 1) / 2;
        const std::size_t pairs = a.pairs_given ? a.pairs : std::min(a.pairs, available);
        SeededRng rng(a.seed);
        const TcReport report = tc_ratio(grid, pairs, rng, opt);
        for (const auto& w : report.warnings) err << "warning: " << w << '\n';
        emit(a.out, out, [&](std::ostream& o) { write_tc_csv(o, report); });
    } else {
        const auto profile = pairwise_mi_profile(grid, a.miller_madow);
        emit(a.out, out, [&](std::ostream& o) { write_mi_profile_csv(o, profile); });
    }
    return kExitOk;
}

struct MmdArgs {
    std::string latents, kernel = KernelSpec::default_gaussian().to_string(), mode = "coupled", out;
    bool delay = false;
    std::size_t segment_length = 0;  // 0: the whole file is one sequence
    std::uint64_t seed = 0;
};

int cmd_mmd(const MmdArgs& a, std::ostream& out) {
    MmdConfig cfg;
    cfg.kernel = kernel_flag(a.kernel);
    cfg.apply_delay = a.delay;
    cfg.seed = a.seed;
    if (a.mode == "coupled") {
        cfg.mode = SamplingMode::Coupled;
    } else if (a.mode == "split") {
        cfg.mode = SamplingMode::Split;
    } else {
        throw ArgumentError("unknown mode '" + a.mode + "' (expected coupled or split)");
    }
    const LatentBatch z = load_latents(a.latents);
    const std::size_t segment = a.segment_length == 0 ? z.samples() : a.segment_length;
    const auto loss = independence_loss(z, segment, cfg, /*with_grad=*/false);
    emit(a.out, out, [&](std::ostream& o) { write_mmd_csv(o, loss.report); });
    return kExitOk;
}

struct TrainArgs {
    std::string config, out, summary;
    std::optional<std::uint64_t> seed;
    bool dump_config = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const ToyCodecConfig cfg = config_from(a.config, a.seed);
    if (a.dump_config) {
        emit(a.out, out, [&](std::ostream& o) { o << format_config(cfg); });
        return kExitOk;
    }
    const TrainReport report = train_toy(cfg);
    emit(a.out, out, [&](std::ostream& o) { write_train_csv(o, report); });
    if (!a.summary.empty()) {
        emit(a.summary, out, [&](std::ostream& o) {
            o << "final_rec,final_mmd,tc_ratio_percent,min_usage\n"
              << format_real(report.final_rec) << ',' << format_real(report.final_mmd.value) << ','
              << format_real(report.final_tc.ratio_percent) << ','
              << format_real(report.usage.empty()
                                 ? 0.0
                                 : *std::min_element(report.usage.begin(), report.usage.end()))
              << '\n';
        });
    }
    for (const auto& w : report.final_tc.warnings) err << "warning: " << w << '\n';
    return kExitOk;
}

struct SweepArgs {
    std::string config, out, lambdas = "0,10,1000";
    std::optional<std::uint64_t> seed;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    const ToyCodecConfig cfg = config_from(a.config, a.seed);
    const auto rows = sweep_weights(cfg, parse_lambdas(a.lambdas), thread_budget());
    emit(a.out, out, [&](std::ostream& o) { write_sweep_csv(o, rows); });
    return kExitOk;
}

struct PatternArgs {
    std::string mode, pattern, tokens, out, format = "csv";
};

int cmd_pattern(const PatternArgs& a, std::ostream& out) {
    const FileFormat format = parse_file_format(a.format);
    const TokenFile in = load_tokens(a.tokens);
    TokenFile result;
    if (a.mode == "apply") {
        if (a.pattern.empty()) throw ArgumentError("--pattern is required for apply");
        const PatternKind kind = pattern_flag(a.pattern);
        result = tokens_from_patterned(apply_pattern(grid_from_tokens(in), kind));
    } else if (a.mode == "invert") {
        const PatternedGrid p = patterned_from_tokens(in);
        if (!a.pattern.empty() && pattern_flag(a.pattern) != p.kind) {
            throw FormatError("file holds " + std::string(pattern_name(p.kind)) +
                              "-patterned tokens, not " + a.pattern);
        }
        result = tokens_from_grid(invert_pattern(p));
    } else {
        throw ArgumentError("unknown mode '" + a.mode + "' (expected apply or invert)");
    }
    emit(a.out, out, [&](std::ostream& o) { write_tokens(o, result, format); });
    return kExitOk;
}

struct QuantizeArgs {
    std::string latents, model, out, format = "csv";
};

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
    const FileFormat format = parse_file_format(a.format);
    const Quantizer q = load_quantizer(a.model);
    const LatentBatch z = load_latents(a.latents);
    const std::size_t width = z.codebooks() * z.dim();
    if (width != latent_dim(q)) {
        throw DimensionError("latent width " + std::to_string(width) +
                             " does not match model dimension " + std::to_string(latent_dim(q)));
    }
    const QuantizeResult r = encode(q, z.flattened());
    TokenFile f;
    f.steps = z.samples();
    f.codebooks = codebook_count(q);
    f.vocab = static_cast<std::uint32_t>(codebook_size(q));
    f.indices = r.indices;
    emit(a.out, out, [&](std::ostream& o) { write_tokens(o, f, format); });
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Independence measurement and training for multi-codebook token streams", "cindep"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "Total correlation or MI profile of a token file");
    analyze->add_option("--tokens", an.tokens, "Token file (csv or bin)")->required();
    analyze->add_option("--metric", an.metric, "tc | mi-profile")->capture_default_str();
    auto* pairs_opt = analyze->add_option("--pairs", an.pairs, "Codebook pairs to average")
                          ->capture_default_str();
    analyze->add_option("--seed", an.seed, "Pair selection seed")->capture_default_str();
    analyze->add_flag("--miller-madow", an.miller_madow, "Bias-corrected entropies");
    analyze->add_flag("--mean-of-ratios", an.mean_of_ratios, "Average per-pair ratios");
    analyze->add_option("--out", an.out, "Output CSV (default stdout)");

    MmdArgs mm;
    auto* mmd = app.add_subcommand("mmd", "Independence MMD of a latent file");
    mmd->add_option("--latents", mm.latents, "Latent file (csv or bin)")->required();
    mmd->add_option("--kernel", mm.kernel, "Kernel spec")->capture_default_str();
    mmd->add_flag("--delay", mm.delay, "Realign codebooks by their delay before shuffling");
    mmd->add_option("--mode", mm.mode, "coupled | split")->capture_default_str();
    mmd->add_option("--segment-length", mm.segment_length,
                    "Frames per sequence (default: the whole file)");
    mmd->add_option("--seed", mm.seed, "Shuffle seed")->capture_default_str();
    mmd->add_option("--out", mm.out, "Output CSV (default stdout)");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train the toy codec");
    train->add_option("--config", tr.config, "Config file (default: built-in defaults)");
    train->add_option("--seed", tr.seed, "Override the config seed");
    train->add_option("--out", tr.out, "Loss curve CSV (default stdout)");
    train->add_option("--summary", tr.summary, "Final metrics CSV");
    train->add_flag("--dump-config", tr.dump_config, "Print the effective config and exit");

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "Train once per independence weight");
    sweep->add_option("--config", sw.config, "Config file (default: built-in defaults)");
    sweep->add_option("--lambdas", sw.lambdas, "Comma-separated weights, ascending from 0")
        ->capture_default_str();
    sweep->add_option("--seed", sw.seed, "Override the config seed");
    sweep->add_option("--out", sw.out, "Sweep CSV (default stdout)");

    PatternArgs pa;
    auto* pattern = app.add_subcommand("pattern", "Apply or invert a decoding pattern");
    pattern->add_option("--mode", pa.mode, "apply | invert")->required();
    pattern->add_option("--pattern", pa.pattern, "parallel | delay | flatten");
    pattern->add_option("--tokens", pa.tokens, "Input token file")->required();
    pattern->add_option("--out", pa.out, "Output token file (default stdout)");
    pattern->add_option("--format", pa.format, "csv | bin")->capture_default_str();

    QuantizeArgs qa;
    auto* quantize = app.add_subcommand("quantize", "Encode latents with a stored quantizer");
    quantize->add_option("--latents", qa.latents, "Latent file, one row of N values per sample")
        ->required();
    quantize->add_option("--model", qa.model, "CQNT quantizer file")->required();
    quantize->add_option("--out", qa.out, "Output token file (default stdout)");
    quantize->add_option("--format", qa.format, "csv | bin")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitArgument;
    }

    try {
        if (*analyze) {
            an.pairs_given = pairs_opt->count() > 0;
            return cmd_analyze(an, out, err);
        }
        if (*mmd) return cmd_mmd(mm, out);
        if (*train) return cmd_train(tr, out, err);
        if (*sweep) return cmd_sweep(sw, out);
        if (*pattern) return cmd_pattern(pa, out);
        if (*quantize) return cmd_quantize(qa, out);
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n' << "divergence step: " << e.step() << '\n';
        return kExitDivergence;
    } catch (const ArgumentError& e) {
        err << "error: " << e.what() << '\n';
        return kExitArgument;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const DimensionError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitArgument;
}

}  // namespace cindep
