#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_app.hpp"
#include "redct/image_io.hpp"
#include "redct/metrics.hpp"
#include "redct/red_model.hpp"
#include "redct/tensor_io.hpp"

using namespace redct;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "redct");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    const auto b = read_file_bytes(p);
    return {b.begin(), b.end()};
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string tiny_config(const fs::path& manifest) {
    return "manifest=" + manifest.string() +
           "\nlayers=4\nchannels=3\npatch_size=16\npatches_per_image=2\nbatch_size=2\niterations=6\n"
           "checkpoint_every=3\nseed=5\n";
}

// patch_hash column of a history file
std::vector<std::string> patch_hashes(const fs::path& history) {
    std::vector<std::string> out;
    for (const auto& l : lines_of(slurp(history))) out.push_back(l.substr(l.rfind('\t') + 1));
    return out;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({"simulate", "--out", "x", "--bogus", "1"}).code == cli::kUsage);
    CHECK(run({"simulate"}).code == cli::kUsage);
    CHECK(run({"simulate", "--out", "x", "--count", "abc"}).code == cli::kUsage);
    CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("simulate") {
    TempDir tmp("redct_cli_sim");
    SUBCASE("empty") {
        const Run r = run({"simulate", "--out", (tmp.path / "e").string(), "--count", "0"});
        CHECK(r.code == 0);
        CHECK(slurp(tmp.path / "e" / "manifest.tsv").empty());
        CHECK(r.out.find("count=0") != std::string::npos);
    }
    SUBCASE("nine pairs, rerun byte-identical") {
        const std::vector<std::string> args{"simulate", "--count", "9", "--size", "32", "--views", "45", "--photons",
                                            "1e4", "--seed", "7"};
        auto a = args, b = args;
        a.insert(a.end(), {"--out", (tmp.path / "a").string()});
        b.insert(b.end(), {"--out", (tmp.path / "b").string()});
        REQUIRE(run(a).code == 0);
        REQUIRE(run(b).code == 0);
        const auto manifest = lines_of(slurp(tmp.path / "a" / "manifest.tsv"));
        CHECK(manifest.size() == 9);
        CHECK(manifest[0] == "7\t10000\t45\tpair_000_clean.rtf\tpair_000_noisy.rtf");
        CHECK(slurp(tmp.path / "a" / "manifest.tsv") == slurp(tmp.path / "b" / "manifest.tsv"));
        for (const auto& entry : fs::directory_iterator(tmp.path / "a"))
            CHECK(slurp(entry.path()) == slurp(tmp.path / "b" / entry.path().filename()));
        const ImageFile pgm = read_image(tmp.path / "a" / "pair_003_noisy.pgm");
        CHECK(pgm.image.shape() == Shape{1, 32, 32});
        CHECK(pgm.maxval == 65535);
        CHECK(read_manifest(tmp.path / "a" / "manifest.tsv").size() == 9);
    }
    SUBCASE("bad size") {
        CHECK(run({"simulate", "--out", (tmp.path / "s").string(), "--size", "16"}).code == cli::kUsage);
    }
    SUBCASE("unwritable output") {
        write_text(tmp.path / "file", "x");
        CHECK(run({"simulate", "--out", (tmp.path / "file" / "sub").string(), "--count", "1", "--size", "32"}).code ==
              cli::kRuntime);
    }
}

TEST_CASE("train, denoise, eval and sweep compose") {
    TempDir tmp("redct_cli_pipeline");
    const auto data = tmp.path / "data";
    REQUIRE(run({"simulate", "--out", data.string(), "--count", "3", "--size", "32", "--views", "60", "--seed", "1"})
                .code == 0);
    const auto manifest = data / "manifest.tsv";

    SUBCASE("train") {
        const Run missing = run({"train", "--config", (tmp.path / "nope.cfg").string(), "--out", "x"});
        CHECK(missing.code == cli::kUsage);
        CHECK(missing.err.find("nope.cfg") != std::string::npos);

        write_text(tmp.path / "odd.cfg", tiny_config(manifest) + "layers=7\n");
        CHECK(run({"train", "--config", (tmp.path / "odd.cfg").string(), "--out", "x"}).code == cli::kUsage);

        write_text(tmp.path / "typo.cfg", tiny_config(manifest) + "iteratoins=4\n");
        CHECK(run({"train", "--config", (tmp.path / "typo.cfg").string(), "--out", "x"}).code == cli::kUsage);

        write_text(tmp.path / "ok.cfg", tiny_config(manifest));
        const Run ok = run({"train", "--config", (tmp.path / "ok.cfg").string(), "--out", (tmp.path / "run").string()});
        CHECK(ok.code == 0);
        CHECK(ok.out.find("layers=4") != std::string::npos);
        CHECK(ok.out.find("lambda_p=0.1") != std::string::npos);
        CHECK(ok.out.find("layers=4") < ok.out.find("iter 1"));
        CHECK(load_checkpoint(tmp.path / "run" / "final.rdck").config().num_layers == 4);
        CHECK(fs::exists(tmp.path / "run" / "checkpoint_000003.rdck"));

        write_text(tmp.path / "boom.cfg", tiny_config(manifest) + "learning_rate=1e200\niterations=40\n");
        const Run boom = run({"train", "--config", (tmp.path / "boom.cfg").string(), "--out", (tmp.path / "b").string()});
        CHECK(boom.code == cli::kRuntime);
        CHECK(boom.err.find("last_good.rdck") != std::string::npos);

        write_text(tmp.path / "nodata.cfg", tiny_config(tmp.path / "absent.tsv"));
        CHECK(run({"train", "--config", (tmp.path / "nodata.cfg").string(), "--out", "x"}).code == cli::kRuntime);
    }

    SUBCASE("denoise") {
        save_checkpoint(RedModel::build({4, 3, 3, 1}), tmp.path / "zero.rdck");
        for (const char* ext : {".pgm", ".rtf"}) {
            const auto in = data / (std::string("pair_000_noisy") + ext);
            const auto out = tmp.path / (std::string("out") + ext);
            REQUIRE(run({"denoise", "--model", (tmp.path / "zero.rdck").string(), "--in", in.string(), "--out",
                         out.string()})
                        .code == 0);
            CHECK(slurp(in) == slurp(out));
        }
        auto bytes = read_file_bytes(tmp.path / "zero.rdck");
        bytes[bytes.size() / 2] ^= 0xff;
        write_file_bytes(tmp.path / "bad.rdck", bytes);
        CHECK(run({"denoise", "--model", (tmp.path / "bad.rdck").string(), "--in",
                   (data / "pair_000_noisy.pgm").string(), "--out", (tmp.path / "o.pgm").string()})
                  .code == cli::kRuntime);
        // a 2x2 image is smaller than the 3x3 kernel
        write_rtf(tmp.path / "tiny.rtf", Tensor::zeros({1, 2, 2}));
        CHECK(run({"denoise", "--model", (tmp.path / "zero.rdck").string(), "--in", (tmp.path / "tiny.rtf").string(),
                   "--out", (tmp.path / "o.rtf").string()})
                  .code == cli::kRuntime);
    }

    SUBCASE("eval") {
        save_checkpoint(RedModel::build({4, 3, 3, 1}), tmp.path / "zero.rdck");
        const auto report = tmp.path / "report.tsv";
        REQUIRE(run({"eval", "--model", (tmp.path / "zero.rdck").string(), "--manifest", manifest.string(), "--out",
                     report.string()})
                    .code == 0);
        const auto text = slurp(report);
        const auto lines = lines_of(text);
        CHECK(lines[0] == "# model\tzero.rdck");
        CHECK(lines[1] == "# manifest\tmanifest.tsv");
        CHECK(lines[2] == "id\tssim\trmse\tpsnr_db");
        for (std::size_t i = 0; i < 3; ++i) {
            const auto d = lines[3 + 2 * i], n = lines[4 + 2 * i];
            CHECK(d.substr(d.find('\t')) == n.substr(n.find('\t')));
        }
        REQUIRE(run({"eval", "--model", (tmp.path / "zero.rdck").string(), "--manifest", manifest.string(), "--out",
                     (tmp.path / "again.tsv").string()})
                    .code == 0);
        CHECK(slurp(tmp.path / "again.tsv") == text);
        CHECK(run({"eval", "--model", (tmp.path / "zero.rdck").string(), "--manifest",
                   (tmp.path / "missing.tsv").string(), "--out", report.string()})
                  .code == cli::kRuntime);
    }

    SUBCASE("sweep-depth") {
        write_text(tmp.path / "base.cfg", tiny_config(manifest));
        CHECK(run({"sweep-depth", "--layers", "4,7", "--config", (tmp.path / "base.cfg").string(), "--out",
                   (tmp.path / "s").string()})
                  .code == cli::kUsage);

        const Run sweep = run({"sweep-depth", "--layers", "2,4", "--config", (tmp.path / "base.cfg").string(), "--out",
                               (tmp.path / "sweep").string()});
        REQUIRE(sweep.code == 0);
        const auto table = lines_of(slurp(tmp.path / "sweep" / "sweep.tsv"));
        REQUIRE(table.size() == 4);
        CHECK(table[0] == "layers\tSSIM\tRMSE\tPSNR\twall_seconds");
        CHECK(table[1].rfind("2\t", 0) == 0);
        CHECK(table[2].rfind("4\t", 0) == 0);
        CHECK(table[3].rfind("#noisy\t", 0) == 0);
        CHECK(patch_hashes(tmp.path / "sweep" / "layers_02" / "history.tsv") ==
              patch_hashes(tmp.path / "sweep" / "layers_04" / "history.tsv"));

        // The 4-layer entry equals a plain train + eval with the same config.
        REQUIRE(run({"train", "--config", (tmp.path / "base.cfg").string(), "--out", (tmp.path / "t").string()}).code ==
                0);
        REQUIRE(run({"eval", "--model", (tmp.path / "t" / "final.rdck").string(), "--manifest", manifest.string(),
                     "--out", (tmp.path / "t" / "report.tsv").string()})
                    .code == 0);
        CHECK(slurp(tmp.path / "t" / "final.rdck") == slurp(tmp.path / "sweep" / "layers_04" / "final.rdck"));
        CHECK(slurp(tmp.path / "t" / "report.tsv") == slurp(tmp.path / "sweep" / "layers_04" / "report.tsv"));

        const Run parallel = run({"sweep-depth", "--layers", "2,4", "--parallel", "--config",
                                  (tmp.path / "base.cfg").string(), "--out", (tmp.path / "par").string()});
        REQUIRE(parallel.code == 0);
        CHECK(slurp(tmp.path / "par" / "layers_04" / "final.rdck") ==
              slurp(tmp.path / "sweep" / "layers_04" / "final.rdck"));
    }
}
