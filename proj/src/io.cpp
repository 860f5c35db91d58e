#include "cindep/io.hpp"

#include "cindep/binio.hpp"
#include "cindep/errors.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>
#include <string_view>

namespace cindep {

FileFormat parse_file_format(std::string_view text) {
    if (text == "csv") return FileFormat::Csv;
    if (text == "bin") return FileFormat::Binary;
    throw ArgumentError("unknown format '" + std::string(text) + "' (expected csv or bin)");
}

std::string format_real(double v) {
    std::array<char, 32> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

namespace {

constexpr std::array<char, 4> kTokenMagic = {'C', 'I', 'D', 'X'};
constexpr std::array<char, 4> kLatentMagic = {'C', 'L', 'A', 'T'};
constexpr std::uint16_t kTokenPlain = 1;
constexpr std::uint16_t kTokenPatterned = 2;

std::string slurp(std::istream& in) {
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool starts_with_magic(std::istream& in, const std::array<char, 4>& magic) {
    std::array<char, 4> head{};
    in.read(head.data(), 4);
    const auto got = in.gcount();
    in.clear();
    in.seekg(-got, std::ios::cur);
    if (!in) throw FormatError("input stream is not seekable");
    return got == 4 && head == magic;
}

// Splits on '\n'; one trailing newline is allowed, blank lines are not.
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    if (!text.empty() && text.back() == '\n') text.remove_suffix(1);
    if (text.empty()) return lines;
    std::size_t start = 0;
    while (true) {
        const std::size_t nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t c = line.find(',', start);
        out.push_back(line.substr(start, c == std::string_view::npos ? c : c - start));
        if (c == std::string_view::npos) break;
        start = c + 1;
    }
    return out;
}

std::string where(std::size_t line_no) { return "line " + std::to_string(line_no + 1); }

std::uint64_t parse_uint(std::string_view s, std::size_t line_no) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError(where(line_no) + ": expected a non-negative integer, got '" +
                          std::string(s) + "'");
    }
    return v;
}

std::uint32_t parse_u32(std::string_view s, std::size_t line_no) {
    const auto v = parse_uint(s, line_no);
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(where(line_no) + ": value " + std::string(s) + " exceeds 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

double parse_real(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError(where(line_no) + ": expected a real number, got '" + std::string(s) + "'");
    }
    if (!std::isfinite(v)) throw FormatError(where(line_no) + ": non-finite value");
    return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw DimensionError(std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

void check_stream(std::ostream& out) {
    if (!out) throw FormatError("write failed");
}

std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

// -- tokens ------------------------------------------------------------------

void TokenFile::validate() const {
    if (indices.size() != steps * codebooks) {
        throw FormatError("token count " + std::to_string(indices.size()) + " does not match " +
                          std::to_string(steps) + "x" + std::to_string(codebooks));
    }
    if (vocab == 0) throw FormatError("codebook size M must be positive");
    const std::uint32_t limit = pattern ? vocab + 1 : vocab;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= limit) {
            throw FormatError("token " + std::to_string(indices[i]) + " at frame " +
                              std::to_string(i / codebooks) + " is out of range for M=" +
                              std::to_string(vocab));
        }
    }
    if (!pattern && original_steps != 0) {
        throw FormatError("original length given without a pattern");
    }
}

void write_tokens(std::ostream& out, const TokenFile& file, FileFormat format) {
    file.validate();
    if (format == FileFormat::Csv) {
        out << file.steps << ',' << file.codebooks << ',' << file.vocab;
        if (file.pattern) out << ',' << pattern_name(*file.pattern) << ',' << file.original_steps;
        out << '\n';
        for (std::size_t t = 0; t < file.steps; ++t) {
            for (std::size_t k = 0; k < file.codebooks; ++k) {
                if (k) out << ',';
                out << file.indices[t * file.codebooks + k];
            }
            out << '\n';
        }
    } else {
        out.write(kTokenMagic.data(), 4);
        binio::write_u16(out, file.pattern ? kTokenPatterned : kTokenPlain);
        binio::write_u32(out, checked_u32(file.steps, "T"));
        binio::write_u32(out, checked_u32(file.codebooks, "K"));
        binio::write_u32(out, file.vocab);
        if (file.pattern) {
            binio::write_u32(out, static_cast<std::uint32_t>(*file.pattern));
            binio::write_u32(out, checked_u32(file.original_steps, "original T"));
        }
        for (auto v : file.indices) binio::write_u32(out, v);
    }
    check_stream(out);
}

namespace {

TokenFile read_tokens_binary(std::istream& in) {
    std::array<char, 4> magic{};
    binio::read_exact(in, magic.data(), 4, "magic");
    TokenFile f;
    const auto version = binio::read_u16(in, "version");
    if (version != kTokenPlain && version != kTokenPatterned) {
        throw FormatError("unsupported token file version " + std::to_string(version));
    }
    f.steps = binio::read_u32(in, "T");
    f.codebooks = binio::read_u32(in, "K");
    f.vocab = binio::read_u32(in, "M");
    if (version == kTokenPatterned) {
        const auto tag = binio::read_u32(in, "pattern tag");
        if (tag < 1 || tag > 3) throw FormatError("unknown pattern tag " + std::to_string(tag));
        f.pattern = static_cast<PatternKind>(tag);
        f.original_steps = binio::read_u32(in, "original T");
    }
    // Guard the allocation against a corrupt header.
    const auto count = static_cast<unsigned long long>(f.steps) * f.codebooks;
    const auto here = in.tellg();
    if (here >= 0) {
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(here);
        if (end >= 0 && static_cast<unsigned long long>(end - here) < count * 4) {
            throw FormatError("truncated input while reading token payload");
        }
    }
    f.indices.resize(count);
    for (auto& v : f.indices) v = binio::read_u32(in, "tokens");
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after token payload");
    }
    f.validate();
    return f;
}

TokenFile read_tokens_csv(std::istream& in) {
    const std::string text = slurp(in);
    const auto lines = split_lines(text);
    if (lines.empty()) throw FormatError("empty token file");
    const auto head = split_fields(lines[0]);
    if (head.size() != 3 && head.size() != 5) {
        throw FormatError("line 1: expected header T,K,M or T,K,M,pattern,original_T");
    }
    TokenFile f;
    f.steps = parse_uint(head[0], 0);
    f.codebooks = parse_uint(head[1], 0);
    f.vocab = parse_u32(head[2], 0);
    if (head.size() == 5) {
        f.pattern = parse_pattern(head[3]);
        f.original_steps = parse_uint(head[4], 0);
    }
    if (lines.size() - 1 != f.steps) {
        throw FormatError("header declares " + std::to_string(f.steps) + " frames but " +
                          std::to_string(lines.size() - 1) + " follow");
    }
    f.indices.reserve(f.steps * f.codebooks);
    for (std::size_t t = 0; t < f.steps; ++t) {
        const auto fields = split_fields(lines[t + 1]);
        if (fields.size() != f.codebooks) {
            throw FormatError(where(t + 1) + ": expected " + std::to_string(f.codebooks) +
                              " indices, got " + std::to_string(fields.size()));
        }
        for (auto field : fields) f.indices.push_back(parse_u32(field, t + 1));
    }
    f.validate();
    return f;
}

}  // namespace

TokenFile read_tokens(std::istream& in) {
    return starts_with_magic(in, kTokenMagic) ? read_tokens_binary(in) : read_tokens_csv(in);
}

TokenFile tokens_from_grid(const CodeGrid& grid) {
    TokenFile f;
    f.steps = grid.frames();
    f.codebooks = grid.codebooks;
    f.vocab = grid.vocab;
    f.indices = grid.indices;
    return f;
}

CodeGrid grid_from_tokens(const TokenFile& file) {
    if (file.pattern) {
        throw FormatError("token file holds " + std::string(pattern_name(*file.pattern)) +
                          "-patterned tokens; invert the pattern first");
    }
    file.validate();
    return CodeGrid(1, file.steps, file.codebooks, file.vocab, file.indices);
}

TokenFile tokens_from_patterned(const PatternedGrid& p) {
    if (p.batch != 1) throw DimensionError("patterned token files hold a single sequence");
    TokenFile f;
    f.steps = p.steps;
    f.codebooks = p.width;
    f.vocab = p.vocab;
    f.pattern = p.kind;
    f.original_steps = p.source_steps;
    f.indices = p.tokens;
    return f;
}

PatternedGrid patterned_from_tokens(const TokenFile& file) {
    if (!file.pattern) throw FormatError("token file carries no pattern metadata");
    file.validate();
    PatternedGrid p;
    p.kind = *file.pattern;
    p.batch = 1;
    p.source_steps = file.original_steps;
    if (p.kind == PatternKind::Flatten) {
        if (file.codebooks != 1 || file.original_steps == 0 ||
            file.steps % file.original_steps != 0) {
            throw FormatError("flattened token file length is not a multiple of its original length");
        }
        p.source_codebooks = file.steps / file.original_steps;
    } else {
        p.source_codebooks = file.codebooks;
    }
    p.vocab = file.vocab;
    p.steps = file.steps;
    p.width = file.codebooks;
    p.tokens = file.indices;
    p.valid.resize(p.tokens.size());
    for (std::size_t i = 0; i < p.tokens.size(); ++i) p.valid[i] = p.tokens[i] != p.vocab;
    return p;
}

// -- latents -----------------------------------------------------------------

void write_latents(std::ostream& out, const LatentBatch& z, FileFormat format) {
    if (!z.all_finite()) throw FormatError("latents contain non-finite values");
    if (format == FileFormat::Csv) {
        out << z.samples() << ',' << z.codebooks() << ',' << z.dim() << '\n';
        for (std::size_t s = 0; s < z.samples(); ++s) {
            const auto row = z.sample(s);
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out << ',';
                out << format_real(row[i]);
            }
            out << '\n';
        }
    } else {
        out.write(kLatentMagic.data(), 4);
        binio::write_u32(out, checked_u32(z.samples(), "S"));
        binio::write_u32(out, checked_u32(z.codebooks(), "K"));
        binio::write_u32(out, checked_u32(z.dim(), "N"));
        for (double v : z.data()) binio::write_f64(out, v);
    }
    check_stream(out);
}

namespace {

LatentBatch read_latents_binary(std::istream& in) {
    std::array<char, 4> magic{};
    binio::read_exact(in, magic.data(), 4, "magic");
    const std::size_t S = binio::read_u32(in, "S");
    const std::size_t K = binio::read_u32(in, "K");
    const std::size_t N = binio::read_u32(in, "N");
    const auto count = static_cast<unsigned long long>(S) * K * N;
    const auto here = in.tellg();
    if (here >= 0) {
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(here);
        if (end >= 0 && static_cast<unsigned long long>(end - here) < count * 8) {
            throw FormatError("truncated input while reading latent payload");
        }
    }
    std::vector<double> data(count);
    for (auto& v : data) {
        v = binio::read_f64(in, "latents");
        if (!std::isfinite(v)) throw FormatError("latents contain non-finite values");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after latent payload");
    }
    return LatentBatch(S, K, N, std::move(data));
}

LatentBatch read_latents_csv(std::istream& in) {
    const std::string text = slurp(in);
    const auto lines = split_lines(text);
    if (lines.empty()) throw FormatError("empty latent file");
    const auto head = split_fields(lines[0]);
    if (head.size() != 3) throw FormatError("line 1: expected header S,K,N");
    const std::size_t S = parse_uint(head[0], 0);
    const std::size_t K = parse_uint(head[1], 0);
    const std::size_t N = parse_uint(head[2], 0);
    if (lines.size() - 1 != S) {
        throw FormatError("header declares " + std::to_string(S) + " samples but " +
                          std::to_string(lines.size() - 1) + " follow");
    }
    std::vector<double> data;
    data.reserve(S * K * N);
    for (std::size_t s = 0; s < S; ++s) {
        const auto fields = split_fields(lines[s + 1]);
        if (fields.size() != K * N) {
            throw FormatError(where(s + 1) + ": expected " + std::to_string(K * N) +
                              " values, got " + std::to_string(fields.size()));
        }
        for (auto field : fields) data.push_back(parse_real(field, s + 1));
    }
    return LatentBatch(S, K, N, std::move(data));
}

}  // namespace

LatentBatch read_latents(std::istream& in) {
    return starts_with_magic(in, kLatentMagic) ? read_latents_binary(in) : read_latents_csv(in);
}

// -- reports -----------------------------------------------------------------

void write_tc_csv(std::ostream& out, const TcReport& r) {
    out << "pair,i,j,tc_nats,joint_entropy_nats\n";
    for (std::size_t p = 0; p < r.pairs.size(); ++p) {
        const auto& e = r.pairs[p];
        out << p << ',' << e.i << ',' << e.j << ',' << format_real(e.tc_nats) << ','
            << format_real(e.joint_entropy_nats) << '\n';
    }
    out << "ratio_percent\n" << format_real(r.ratio_percent) << '\n';
    check_stream(out);
}

void write_mi_profile_csv(std::ostream& out, const std::vector<double>& profile) {
    out << "codebook,mi_nats\n";
    for (std::size_t k = 0; k < profile.size(); ++k) {
        out << k << ',' << format_real(profile[k]) << '\n';
    }
    check_stream(out);
}

void write_mmd_csv(std::ostream& out, const MmdReport& r) {
    out << "mmd,samples,kernel,delay,seed\n"
        << format_real(r.value) << ',' << r.sample_count << ',' << csv_quote(r.kernel) << ','
        << (r.delay ? "on" : "off") << ',' << r.seed << '\n';
    check_stream(out);
}

void write_train_csv(std::ostream& out, const TrainReport& r) {
    out << "step,rec,commit,inde\n";
    auto row = [&](std::size_t step, const StepLosses& l) {
        out << step << ',' << format_real(l.rec) << ',' << format_real(l.commit) << ','
            << format_real(l.inde) << '\n';
    };
    row(0, r.initial);
    for (std::size_t s = 0; s < r.curve.size(); ++s) row(s + 1, r.curve[s]);
    check_stream(out);
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "lambda,mmd,tc_ratio_percent,rec\n";
    for (const auto& r : rows) {
        out << format_real(r.lambda) << ',' << format_real(r.mmd) << ','
            << format_real(r.tc_ratio_percent) << ',' << format_real(r.rec) << '\n';
    }
    check_stream(out);
}

// -- paths -------------------------------------------------------------------

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace

TokenFile load_tokens(const std::string& path) {
    auto in = open_in(path);
    return read_tokens(in);
}

void save_tokens(const std::string& path, const TokenFile& file, FileFormat format) {
    auto out = open_out(path);
    write_tokens(out, file, format);
}

LatentBatch load_latents(const std::string& path) {
    auto in = open_in(path);
    return read_latents(in);
}

void save_latents(const std::string& path, const LatentBatch& latents, FileFormat format) {
    auto out = open_out(path);
    write_latents(out, latents, format);
}

Quantizer load_quantizer(const std::string& path) {
    auto in = open_in(path);
    return read_quantizer(in);
}

void save_quantizer(const std::string& path, const Quantizer& q) {
    auto out = open_out(path);
    write_quantizer(out, q);
}

}  // namespace cindep
