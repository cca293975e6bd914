#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "voxgan/hash.hpp"
#include "voxgan/train.hpp"
#include "voxgan/volume.hpp"

// Drives the installed CLI binary end to end. VOXGAN_CLI_PATH is injected by
// the build.

namespace {

namespace fs = std::filesystem;

struct Sandbox {
    fs::path dir;
    Sandbox() {
        dir = fs::temp_directory_path() /
              ("voxgan_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string p(const std::string& name) const { return (dir / name).string(); }
};

Sandbox& sandbox() {
    static Sandbox s;
    return s;
}

int run(const std::string& args, const std::string& capture = "") {
    std::string cmd = std::string(VOXGAN_CLI_PATH) + " --manifest " +
                      sandbox().p("runs.manifest") + " " + args;
    if (!capture.empty()) cmd += " > " + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

const char* kArch = "--latent-dim 16 --base-channels 2 --output-size 16";

}  // namespace

TEST_CASE("make-synthetic: artifact, idempotence, usage errors") {
    auto& sb = sandbox();
    const std::string ti = sb.p("ti.gvox");
    REQUIRE(run("make-synthetic channels --dims 64 --seed 7 -o " + ti) == 0);
    voxgan::Volume v = voxgan::read_gvox(ti);
    CHECK(v.dims == std::array<std::size_t, 3>{64, 64, 64});
    CHECK(v.dtype == voxgan::VoxelType::binary_u8);

    const std::string ti2 = sb.p("ti_again.gvox");
    REQUIRE(run("make-synthetic channels --dims 64 --seed 7 -o " + ti2) == 0);
    CHECK(voxgan::hash_file(ti) == voxgan::hash_file(ti2));

    const std::string err = sb.p("err.txt");
    CHECK(run("make-synthetic channels --dims 0 --seed 7 -o " + sb.p("bad.gvox"),
              err) == 2);
    CHECK(slurp(err).find("--dims") != std::string::npos);

    REQUIRE(run("make-synthetic granular --dims 32 --seed 3 -o " +
                sb.p("gran.gvox")) == 0);
    CHECK(voxgan::read_gvox(sb.p("gran.gvox")).dtype ==
          voxgan::VoxelType::gray_f32);
}

TEST_CASE("train: zero steps equals initialization; reruns are bit-identical") {
    auto& sb = sandbox();
    const std::string ti = sb.p("ti32.gvox");
    REQUIRE(run("make-synthetic channels --dims 32 --seed 2 --channel-count 4 "
                "--channel-radius 3 --sinuosity-amplitude 2 -o " +
                ti) == 0);

    const std::string m0 = sb.p("m0.gckp");
    REQUIRE(run("train " + ti + " --steps 0 --seed 9 " + kArch + " -o " + m0) == 0);

    // library-side initialization, written independently
    voxgan::ArchSpec spec;
    spec.latent_dim = 16;
    spec.base_channels = 2;
    spec.output_size = 16;
    auto state = voxgan::make_trainer_state(spec, 9);
    const std::string lib = sb.p("lib.gckp");
    voxgan::write_checkpoint(lib, voxgan::state_to_checkpoint(state));
    CHECK(voxgan::hash_file(m0) == voxgan::hash_file(lib));

    const std::string ma = sb.p("ma.gckp");
    const std::string mb = sb.p("mb.gckp");
    const std::string train_flags = " --steps 3 --batch-size 2 --critic-iters 2 "
                                    "--patch-stride 8 --seed 1 " +
                                    std::string(kArch);
    REQUIRE(run("train " + ti + train_flags + " -o " + ma) == 0);
    REQUIRE(run("train " + ti + train_flags + " -o " + mb) == 0);
    CHECK(voxgan::hash_file(ma) == voxgan::hash_file(mb));
    CHECK(line_count(ma + ".log.csv") == 3);

    // unreadable input reports the defect offset and exits 1
    const std::string junk = sb.p("junk.gvox");
    std::ofstream(junk) << "not a volume";
    const std::string err = sb.p("err2.txt");
    CHECK(run("train " + junk + " --steps 1 " + std::string(kArch) + " -o " +
                  sb.p("x.gckp"),
              err) == 1);
    CHECK(slurp(err).find("byte offset") != std::string::npos);
}

TEST_CASE("sample: distinct per index, reproducible per seed, range-valid") {
    auto& sb = sandbox();
    const std::string m = sb.p("ma.gckp");  // trained in the previous case
    REQUIRE(fs::exists(m));

    REQUIRE(run("sample " + m + " -n 2 --seed 11 -o " + sb.p("s")) == 0);
    REQUIRE(run("sample " + m + " -n 2 --seed 11 -o " + sb.p("t")) == 0);
    CHECK(voxgan::hash_file(sb.p("s_000.gvox")) ==
          voxgan::hash_file(sb.p("t_000.gvox")));
    CHECK(voxgan::hash_file(sb.p("s_001.gvox")) ==
          voxgan::hash_file(sb.p("t_001.gvox")));
    CHECK(voxgan::hash_file(sb.p("s_000.gvox")) !=
          voxgan::hash_file(sb.p("s_001.gvox")));

    // read_gvox enforces [0,1]; this must parse cleanly
    voxgan::Volume v = voxgan::read_gvox(sb.p("s_000.gvox"));
    CHECK(v.dims == std::array<std::size_t, 3>{16, 16, 16});
}

TEST_CASE("condition: self-conditioning via the injected latent converges at 0") {
    auto& sb = sandbox();
    const std::string m = sb.p("ma.gckp");
    REQUIRE(run("sample " + m + " -n 1 --seed 21 -o " + sb.p("ref")) == 0);

    const std::string out = sb.p("cond.gvox");
    const std::string report = sb.p("cond.csv");
    REQUIRE(run("condition " + m + " --data " + sb.p("ref_000.gvox") +
                " --well-center --mode continuous --seed 4 --init-z-seed 21 "
                "--max-iters 100 --restarts 1 -o " +
                out + " --report " + report) == 0);
    // report: seed,converged,iterations,content,perceptual,accuracy
    std::ifstream in(report);
    std::string seed_s, conv_s, iters_s;
    std::getline(in, seed_s, ',');
    std::getline(in, conv_s, ',');
    std::getline(in, iters_s, ',');
    CHECK(conv_s == "1");
    CHECK(iters_s == "0");

    // same flags, same outputs
    const std::string out2 = sb.p("cond2.gvox");
    REQUIRE(run("condition " + m + " --data " + sb.p("ref_000.gvox") +
                " --well-center --mode continuous --seed 4 --init-z-seed 21 "
                "--max-iters 100 --restarts 1 -o " +
                out2 + " --report " + sb.p("cond2.csv")) == 0);
    CHECK(voxgan::hash_file(out) == voxgan::hash_file(out2));

    // no geometry flag is a usage error
    CHECK(run("condition " + m + " --data " + sb.p("ref_000.gvox") +
              " --mode continuous -o " + sb.p("nope.gvox")) == 2);
}

TEST_CASE("ensemble: n=1 gives an all-zero std map and one report row") {
    auto& sb = sandbox();
    const std::string m = sb.p("ma.gckp");
    const std::string outdir = sb.p("ens");
    REQUIRE(run("ensemble " + m + " --data " + sb.p("ref_000.gvox") +
                " --well-center --mode continuous --max-iters 60 --restarts 2 "
                "-n 1 --seed-base 100 --workers 1 -o " +
                outdir) == 0);
    voxgan::Volume std_map = voxgan::read_gvox(outdir + "/std.gvox");
    for (float f : std_map.data) CHECK(f == 0.0f);
    CHECK(line_count(outdir + "/ensemble_report.csv") == 1);
    CHECK(fs::exists(outdir + "/mean.gvox"));

    // report row count matches n
    const std::string outdir3 = sb.p("ens3");
    REQUIRE(run("ensemble " + m + " --data " + sb.p("ref_000.gvox") +
                " --well-center --mode continuous --max-iters 60 --restarts 2 "
                "-n 3 --seed-base 100 --workers 2 -o " +
                outdir3) == 0);
    CHECK(line_count(outdir3 + "/ensemble_report.csv") == 3);
}

TEST_CASE("export-slice emits a parsable PGM") {
    auto& sb = sandbox();
    const std::string pgm = sb.p("slice.pgm");
    REQUIRE(run("export-slice " + sb.p("ti.gvox") + " --axis z --index 32 -o " +
                pgm) == 0);
    const std::string head = slurp(pgm).substr(0, 2);
    CHECK(head == "P5");
    CHECK(run("export-slice " + sb.p("ti.gvox") + " --axis z --index 99 -o " +
              pgm) == 1);
}

TEST_CASE("manifest: one record per run with reproducible output hashes") {
    auto& sb = sandbox();
    const std::string manifest = sb.p("runs.manifest");
    REQUIRE(fs::exists(manifest));
    std::ifstream in(manifest);
    std::string line;
    std::size_t records = 0;
    bool seen_hash = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++records;
        CHECK(line.find("\"command\"") != std::string::npos);
        CHECK(line.find("\"version\"") != std::string::npos);
        if (line.find("\"outputs\"") != std::string::npos &&
            line.find("gvox") != std::string::npos)
            seen_hash = true;
    }
    CHECK(records >= 10);
    CHECK(seen_hash);
}
