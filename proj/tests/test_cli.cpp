#include <doctest.h>

#include "cindep/cli.hpp"
#include "cindep/errors.hpp"
#include "cindep/io.hpp"
#include "cindep/quantizers.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace cindep;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// One scratch directory per test binary run.
const fs::path& scratch() {
    static const fs::path dir = [] {
        std::string tmpl = (fs::temp_directory_path() / "cindep_cli_XXXXXX").string();
        if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        return fs::path(tmpl);
    }();
    return dir;
}

std::string path(const std::string& name) { return (scratch() / name).string(); }

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

TokenFile token_fixture(std::size_t T, std::size_t K, std::uint32_t M, std::uint64_t seed,
                        bool duplicate) {
    SeededRng rng(seed);
    TokenFile f;
    f.steps = T;
    f.codebooks = K;
    f.vocab = M;
    f.indices.resize(T * K);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            f.indices[t * K + k] = duplicate && k > 0 ? f.indices[t * K]
                                                      : static_cast<std::uint32_t>(rng.uniform_index(M));
        }
    }
    return f;
}

// Two codebooks of dimension 2; the second copies the first when `dependent`.
LatentBatch latent_fixture(std::size_t S, std::uint64_t seed, bool dependent) {
    SeededRng rng(seed);
    LatentBatch z(S, 2, 2);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t d = 0; d < 2; ++d) {
            z.code(s, 0)[d] = rng.normal();
            z.code(s, 1)[d] = dependent ? z.code(s, 0)[d] : rng.normal();
        }
    }
    return z;
}

double csv_value(const std::string& csv, std::size_t row, std::size_t col) {
    std::istringstream in(csv);
    std::string line;
    for (std::size_t i = 0; i <= row; ++i) std::getline(in, line);
    std::istringstream fields(line);
    std::string field;
    for (std::size_t i = 0; i <= col; ++i) std::getline(fields, field, ',');
    return std::stod(field);
}

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string small_config(const std::string& extra = "") {
    return "input_dim=4\nK=2\nM=8\nN=4\nbatch_size=8\nsegment_length=8\nsteps=10\n"
           "eval_frames=256\neval_mmd_batches=2\ntc_pairs=1\n" +
           extra;
}

}  // namespace

TEST_CASE("cli: usage errors") {
    CHECK(cli({}).code == kExitArgument);
    CHECK(cli({"frobnicate"}).code == kExitArgument);
    CHECK(cli({"analyze"}).code == kExitArgument);  // --tokens is required
    CHECK(cli({"--help"}).code == kExitOk);
    const Run help = cli({"mmd", "--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("--kernel") != std::string::npos);
}

TEST_CASE("cli analyze: duplicated and independent streams") {
    save_tokens(path("dup.csv"), token_fixture(100000, 2, 4, 1, true), FileFormat::Csv);
    const Run dup = cli({"analyze", "--tokens", path("dup.csv")});
    REQUIRE(dup.code == kExitOk);
    CHECK(dup.out.rfind("pair,i,j,tc_nats,joint_entropy_nats\n", 0) == 0);
    CHECK(csv_value(dup.out, 3, 0) == doctest::Approx(100.0).epsilon(0.01));

    save_tokens(path("ind.bin"), token_fixture(100000, 4, 4, 2, false), FileFormat::Binary);
    const Run ind = cli({"analyze", "--tokens", path("ind.bin"), "--pairs", "5", "--seed", "3"});
    REQUIRE(ind.code == kExitOk);
    CHECK(line_count(ind.out) == 1 + 5 + 2);
    CHECK(csv_value(ind.out, 7, 0) < 0.5);

    const Run mi = cli({"analyze", "--tokens", path("dup.csv"), "--metric", "mi-profile"});
    REQUIRE(mi.code == kExitOk);
    CHECK(mi.out.rfind("codebook,mi_nats\n", 0) == 0);
    CHECK(csv_value(mi.out, 1, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-3));
}

TEST_CASE("cli analyze: errors map to exit codes") {
    save_tokens(path("k1.csv"), token_fixture(50, 1, 4, 1, false), FileFormat::Csv);
    save_tokens(path("k3.csv"), token_fixture(50, 3, 4, 1, false), FileFormat::Csv);
    spit(path("junk.csv"), "3,2,4\n0,1\n");
    CHECK(cli({"analyze", "--tokens", path("k3.csv"), "--pairs", "0"}).code == kExitArgument);
    CHECK(cli({"analyze", "--tokens", path("k3.csv"), "--pairs", "4"}).code == kExitArgument);
    CHECK(cli({"analyze", "--tokens", path("k1.csv")}).code == kExitArgument);
    CHECK(cli({"analyze", "--tokens", path("k3.csv"), "--metric", "entropy"}).code == kExitArgument);
    CHECK(cli({"analyze", "--tokens", path("junk.csv")}).code == kExitInput);
    CHECK(cli({"analyze", "--tokens", path("missing.csv")}).code == kExitInput);
    // Small K shrinks the default pair count instead of failing.
    CHECK(cli({"analyze", "--tokens", path("k3.csv")}).code == kExitOk);
}

TEST_CASE("cli analyze: seeded runs are reproducible") {
    save_tokens(path("rep.csv"), token_fixture(2000, 5, 6, 4, false), FileFormat::Csv);
    const Run a = cli({"analyze", "--tokens", path("rep.csv"), "--seed", "11"});
    const Run b = cli({"analyze", "--tokens", path("rep.csv"), "--seed", "11"});
    REQUIRE(a.code == kExitOk);
    CHECK(a.out == b.out);
}

namespace {

// Seed spread of the estimate over fresh independent fixtures.
struct NullStats {
    double mean = 0.0;
    double sd = 0.0;
};

NullStats null_stats(std::size_t S, const std::string& mode) {
    std::vector<double> v;
    for (std::uint64_t seed = 100; seed < 116; ++seed) {
        save_latents(path("null.bin"), latent_fixture(S, seed, false), FileFormat::Binary);
        const Run r = cli({"mmd", "--latents", path("null.bin"), "--seed", std::to_string(seed),
                           "--mode", mode});
        REQUIRE(r.code == kExitOk);
        v.push_back(csv_value(r.out, 1, 0));
    }
    NullStats st;
    for (double x : v) st.mean += x / v.size();
    for (double x : v) st.sd += (x - st.mean) * (x - st.mean) / (v.size() - 1);
    st.sd = std::sqrt(st.sd);
    return st;
}

}  // namespace

TEST_CASE("cli mmd: dependent vs independent latents") {
    constexpr std::size_t S = 256;
    const NullStats split = null_stats(S, "split");

    save_latents(path("dep.csv"), latent_fixture(S, 7, true), FileFormat::Csv);
    for (const char* mode : {"coupled", "split"}) {
        const Run dep = cli({"mmd", "--latents", path("dep.csv"), "--seed", "1", "--mode", mode});
        REQUIRE(dep.code == kExitOk);
        CHECK(dep.out.rfind("mmd,samples,kernel,delay,seed\n", 0) == 0);
        CHECK(csv_value(dep.out, 1, 0) >= 5.0 * split.sd);
    }

    save_latents(path("ind.csv"), latent_fixture(S, 8, false), FileFormat::Csv);
    const Run ind = cli({"mmd", "--latents", path("ind.csv"), "--seed", "1", "--mode", "split"});
    REQUIRE(ind.code == kExitOk);
    CHECK(std::abs(csv_value(ind.out, 1, 0)) <= 3.0 * split.sd);
}

TEST_CASE("cli mmd: coupled sampling sits slightly below zero under independence") {
    // Each shuffled row shares one component per codebook with some joint row,
    // which inflates the cross term by O(1/S).
    const NullStats coupled = null_stats(256, "coupled");
    CHECK(coupled.mean < -3.0 * coupled.sd / 4.0);  // 4 = sqrt(16 fixtures)
    CHECK(coupled.mean > -0.02);
}

TEST_CASE("cli mmd: delay on one codebook changes nothing") {
    SeededRng rng(6);
    LatentBatch z(64, 1, 3);
    for (double& v : z.data()) v = rng.normal();
    save_latents(path("k1.csv"), z, FileFormat::Csv);
    const Run off = cli({"mmd", "--latents", path("k1.csv"), "--seed", "5"});
    const Run on = cli({"mmd", "--latents", path("k1.csv"), "--seed", "5", "--delay"});
    REQUIRE(off.code == kExitOk);
    REQUIRE(on.code == kExitOk);
    CHECK(csv_value(off.out, 1, 0) == csv_value(on.out, 1, 0));
    CHECK(on.out.find(",on,5\n") != std::string::npos);
}

TEST_CASE("cli mmd: output and errors") {
    save_latents(path("lat.csv"), latent_fixture(40, 3, false), FileFormat::Csv);
    const std::vector<std::string> base = {"mmd", "--latents", path("lat.csv"), "--seed", "2",
                                           "--kernel", "sqinv:12", "--segment-length", "10",
                                           "--delay"};
    const Run a = cli(base);
    const Run b = cli(base);
    REQUIRE(a.code == kExitOk);
    CHECK(a.out == b.out);
    CHECK(a.out.find(",sqinv:12,on,2\n") != std::string::npos);

    auto with = [&](std::vector<std::string> extra) {
        auto args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args).code;
    };
    CHECK(with({"--out", path("mmd.csv")}) == kExitOk);
    CHECK(slurp(path("mmd.csv")) == a.out);
    CHECK(with({"--mode", "split"}) == kExitOk);
    CHECK(with({"--mode", "sideways"}) == kExitArgument);
    CHECK(cli({"mmd", "--latents", path("lat.csv"), "--kernel", "cubic"}).code == kExitArgument);
    CHECK(with({"--segment-length", "7"}) == kExitArgument);  // 40 frames do not split into 7s

    LatentBatch one(1, 2, 2);
    save_latents(path("one.csv"), one, FileFormat::Csv);
    CHECK(cli({"mmd", "--latents", path("one.csv")}).code == kExitArgument);
    spit(path("nan.csv"), "2,1,1\n0.5\nnan\n");
    CHECK(cli({"mmd", "--latents", path("nan.csv")}).code == kExitInput);
}

TEST_CASE("cli pattern: apply then invert is the identity") {
    for (auto fmt : {std::string("csv"), std::string("bin")}) {
        const FileFormat f = parse_file_format(fmt);
        save_tokens(path("src." + fmt), token_fixture(37, 4, 9, 12, false), f);
        for (const char* kind : {"parallel", "delay", "flatten"}) {
            CAPTURE(kind);
            const std::string mid = path(std::string("mid.") + fmt);
            const std::string back = path(std::string("back.") + fmt);
            REQUIRE(cli({"pattern", "--mode", "apply", "--pattern", kind, "--tokens",
                         path("src." + fmt), "--out", mid, "--format", fmt})
                        .code == kExitOk);
            REQUIRE(cli({"pattern", "--mode", "invert", "--tokens", mid, "--out", back,
                         "--format", fmt})
                        .code == kExitOk);
            CHECK(slurp(back) == slurp(path("src." + fmt)));
        }
    }
}

TEST_CASE("cli pattern: documented layouts") {
    save_tokens(path("k1.csv"), token_fixture(5, 1, 7, 2, false), FileFormat::Csv);
    const Run delay = cli({"pattern", "--mode", "apply", "--pattern", "delay", "--tokens",
                           path("k1.csv")});
    REQUIRE(delay.code == kExitOk);
    const std::string src = slurp(path("k1.csv"));
    const auto body = [](const std::string& s) { return s.substr(s.find('\n') + 1); };
    CHECK(body(delay.out) == body(src));
    CHECK(delay.out.rfind("5,1,7,delay,5\n", 0) == 0);

    spit(path("t2k2.csv"), "2,2,9\n1,2\n3,4\n");
    const Run flat = cli({"pattern", "--mode", "apply", "--pattern", "flatten", "--tokens",
                          path("t2k2.csv")});
    REQUIRE(flat.code == kExitOk);
    CHECK(flat.out == "4,1,9,flatten,2\n1\n2\n3\n4\n");
}

TEST_CASE("cli pattern: metadata errors") {
    spit(path("plain.csv"), "2,2,9\n1,2\n3,4\n");
    spit(path("delayed.csv"), "3,2,9,delay,2\n1,9\n3,2\n9,4\n");
    spit(path("broken.csv"), "3,2,9,delay,2\n1,0\n3,2\n9,4\n");
    CHECK(cli({"pattern", "--mode", "invert", "--tokens", path("delayed.csv")}).out ==
          "2,2,9\n1,2\n3,4\n");
    CHECK(cli({"pattern", "--mode", "invert", "--tokens", path("plain.csv")}).code == kExitInput);
    CHECK(cli({"pattern", "--mode", "invert", "--pattern", "flatten", "--tokens",
               path("delayed.csv")})
              .code == kExitInput);
    CHECK(cli({"pattern", "--mode", "invert", "--tokens", path("broken.csv")}).code == kExitInput);
    CHECK(cli({"pattern", "--mode", "apply", "--pattern", "delay", "--tokens", path("delayed.csv")})
              .code == kExitInput);
    CHECK(cli({"pattern", "--mode", "apply", "--tokens", path("plain.csv")}).code == kExitArgument);
    CHECK(cli({"pattern", "--mode", "apply", "--pattern", "spiral", "--tokens", path("plain.csv")})
              .code == kExitArgument);
    CHECK(cli({"pattern", "--mode", "twist", "--tokens", path("plain.csv")}).code == kExitArgument);
    CHECK(cli({"pattern", "--mode", "apply", "--pattern", "delay", "--tokens", path("plain.csv"),
               "--format", "xml"})
              .code == kExitArgument);
}

TEST_CASE("cli quantize: codebook entries map to their indices") {
    SeededRng rng(21);
    PvqQuantizer q;
    for (int g = 0; g < 2; ++g) {
        Matrix e(5, 2);
        for (double& v : e.data()) v = rng.normal();
        q.groups.emplace_back(e);
    }
    save_quantizer(path("pvq.cqnt"), q);

    LatentBatch z(10, 1, 4);
    std::vector<std::uint32_t> expected;
    for (std::size_t s = 0; s < 10; ++s) {
        for (std::size_t g = 0; g < 2; ++g) {
            const auto idx = static_cast<std::uint32_t>(rng.uniform_index(5));
            expected.push_back(idx);
            for (std::size_t d = 0; d < 2; ++d) {
                z.code(s, 0)[g * 2 + d] = q.groups[g].entries(idx, d);
            }
        }
    }
    save_latents(path("entries.csv"), z, FileFormat::Csv);
    const Run r = cli({"quantize", "--latents", path("entries.csv"), "--model", path("pvq.cqnt"),
                       "--out", path("entries_tok.csv")});
    REQUIRE(r.code == kExitOk);
    const TokenFile tok = load_tokens(path("entries_tok.csv"));
    CHECK(tok.steps == 10);
    CHECK(tok.codebooks == 2);
    CHECK(tok.vocab == 5);
    CHECK(tok.indices == expected);
}

TEST_CASE("cli quantize: matches the library and is deterministic") {
    SeededRng rng(22);
    RvqQuantizer q;
    for (int k = 0; k < 3; ++k) {
        Matrix e(16, 3);
        for (double& v : e.data()) v = rng.normal() / (1 + k);
        q.stages.emplace_back(e);
    }
    save_quantizer(path("rvq.cqnt"), q);
    LatentBatch z(200, 1, 3);
    for (double& v : z.data()) v = rng.normal();
    save_latents(path("rand.bin"), z, FileFormat::Binary);

    const std::vector<std::string> args = {"quantize", "--latents", path("rand.bin"), "--model",
                                           path("rvq.cqnt"), "--format", "bin"};
    const Run a = cli(args);
    const Run b = cli(args);
    REQUIRE(a.code == kExitOk);
    CHECK(a.out == b.out);
    std::istringstream in(a.out);
    CHECK(read_tokens(in).indices == rvq_encode(q, z.flattened()).indices);

    // A latent file split as K x N is accepted when K*N matches the model.
    LatentBatch wide(200, 3, 1, std::vector<double>(z.data().begin(), z.data().end()));
    save_latents(path("wide.csv"), wide, FileFormat::Csv);
    const Run w = cli({"quantize", "--latents", path("wide.csv"), "--model", path("rvq.cqnt"),
                       "--format", "bin"});
    CHECK(w.out == a.out);

    LatentBatch narrow(5, 1, 2);
    save_latents(path("narrow.csv"), narrow, FileFormat::Csv);
    CHECK(cli({"quantize", "--latents", path("narrow.csv"), "--model", path("rvq.cqnt")}).code ==
          kExitInput);
    spit(path("bad.cqnt"), "CQNT");
    CHECK(cli({"quantize", "--latents", path("rand.bin"), "--model", path("bad.cqnt")}).code ==
          kExitInput);
}

TEST_CASE("cli train: reports, config errors and divergence") {
    spit(path("small.cfg"), small_config());
    const Run a = cli({"train", "--config", path("small.cfg"), "--out", path("curve.csv"),
                       "--summary", path("summary.csv")});
    REQUIRE(a.code == kExitOk);
    const std::string curve = slurp(path("curve.csv"));
    CHECK(curve.rfind("step,rec,commit,inde\n", 0) == 0);
    CHECK(line_count(curve) == 1 + 1 + 10);
    CHECK(slurp(path("summary.csv")).rfind("final_rec,final_mmd,tc_ratio_percent,min_usage\n", 0) == 0);

    const Run again = cli({"train", "--config", path("small.cfg")});
    CHECK(again.out == curve);
    const Run reseeded = cli({"train", "--config", path("small.cfg"), "--seed", "99"});
    CHECK(reseeded.out != curve);

    spit(path("zero.cfg"), small_config("steps=0\n"));
    const Run zero = cli({"train", "--config", path("zero.cfg")});
    REQUIRE(zero.code == kExitOk);
    CHECK(line_count(zero.out) == 2);

    spit(path("badkey.cfg"), small_config("colour=blue\n"));
    const Run badkey = cli({"train", "--config", path("badkey.cfg")});
    CHECK(badkey.code == kExitInput);
    CHECK(badkey.err.find("colour") != std::string::npos);
    spit(path("badval.cfg"), small_config("M=0\n"));
    const Run badval = cli({"train", "--config", path("badval.cfg")});
    CHECK(badval.code == kExitInput);
    CHECK(badval.err.find("M") != std::string::npos);
    CHECK(cli({"train", "--config", path("nowhere.cfg")}).code == kExitInput);

    spit(path("div.cfg"), small_config("learning_rate=1000\n"));
    const Run div = cli({"train", "--config", path("div.cfg")});
    CHECK(div.code == kExitDivergence);
    CHECK(div.err.find("divergence step: ") != std::string::npos);
}

TEST_CASE("cli train: dumped config reads back") {
    const Run dump = cli({"train", "--dump-config", "--seed", "17"});
    REQUIRE(dump.code == kExitOk);
    CHECK(dump.out.find("seed=17\n") != std::string::npos);
    spit(path("dumped.cfg"), dump.out);
    CHECK(cli({"train", "--config", path("dumped.cfg"), "--dump-config"}).out == dump.out);
}

TEST_CASE("cli sweep: rows and errors") {
    spit(path("sweep.cfg"), small_config("steps=5\n"));
    const Run r = cli({"sweep", "--config", path("sweep.cfg"), "--lambdas", "0,1000"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.rfind("lambda,mmd,tc_ratio_percent,rec\n", 0) == 0);
    CHECK(line_count(r.out) == 3);
    CHECK(csv_value(r.out, 2, 0) == 1000.0);

    CHECK(cli({"sweep", "--config", path("sweep.cfg"), "--lambdas", "10,0"}).code == kExitArgument);
    CHECK(cli({"sweep", "--config", path("sweep.cfg"), "--lambdas", "0,x"}).code == kExitArgument);

    setenv("CINDEP_THREADS", "two", 1);
    CHECK(cli({"sweep", "--config", path("sweep.cfg"), "--lambdas", "0"}).code == kExitArgument);
    setenv("CINDEP_THREADS", "2", 1);
    CHECK(thread_budget() == 2u);
    const Run threaded = cli({"sweep", "--config", path("sweep.cfg"), "--lambdas", "0,1000"});
    CHECK(threaded.out == r.out);
    unsetenv("CINDEP_THREADS");
    CHECK(thread_budget() >= 1u);
}

#ifdef CINDEP_TOOL
TEST_CASE("cli binary: exit status reaches the shell") {
    auto status = [](const std::string& args) {
        const std::string cmd = std::string(CINDEP_TOOL) + " " + args + " >/dev/null 2>&1";
        const int s = std::system(cmd.c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    spit(path("plain.csv"), "2,2,9\n1,2\n3,4\n");
    spit(path("div.cfg"), small_config("learning_rate=1000\n"));
    CHECK(status("pattern --mode apply --pattern delay --tokens " + path("plain.csv")) == 0);
    CHECK(status("analyze --tokens " + path("plain.csv") + " --pairs 0") == 3);
    CHECK(status("pattern --mode invert --tokens " + path("plain.csv")) == 2);
    CHECK(status("train --config " + path("div.cfg")) == 4);
}
#endif
