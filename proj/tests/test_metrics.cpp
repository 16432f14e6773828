#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "redct/ct_sim.hpp"
#include "redct/errors.hpp"
#include "redct/image_io.hpp"
#include "redct/metrics.hpp"
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

Tensor with_noise(const Tensor& x, double amplitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(x.values().begin(), x.values().end());
    for (auto& e : v) e += amplitude * n(rng);
    return Tensor(x.shape(), std::move(v));
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string f; std::getline(in, f, '\t');) out.push_back(f);
    return out;
}

// Writes `count` seeded pairs and a manifest into dir.
fs::path write_pairs(const fs::path& dir, std::size_t count) {
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        PairConfig pc;
        pc.seed = 40 + i;
        pc.size = 32;
        pc.views = 60;
        const ImagePair p = make_pair(pc);
        const std::string c = "c" + std::to_string(i) + ".rtf", n = "n" + std::to_string(i) + ".rtf";
        write_rtf(dir / c, p.clean);
        write_rtf(dir / n, p.noisy);
        entries.push_back({pc.seed, pc.photons, pc.views, c, n});
    }
    write_manifest(dir / "manifest.tsv", entries);
    return dir / "manifest.tsv";
}

}  // namespace

TEST_CASE("rmse") {
    const Tensor a = oracle::random_tensor({1, 16, 16}, 1, 0.0, 1.0);
    CHECK(rmse(a, a) == 0.0);
    CHECK(rmse(Tensor({4}, {0, 0, 0, 0}), Tensor({4}, {1, 1, 1, 1})) == 1.0);
    const Tensor b = oracle::random_tensor({1, 16, 16}, 2, 0.0, 1.0);
    CHECK(std::abs(rmse(a, b) - oracle::rmse(a, b, 16, 16)) < 1e-12);
    CHECK_THROWS_AS(rmse(a, Tensor::zeros({1, 16, 8})), ShapeMismatch);
}

TEST_CASE("psnr") {
    const Tensor zero = Tensor::zeros({1, 10, 10});
    CHECK(psnr(Tensor::full({1, 10, 10}, 0.1), zero).db == doctest::Approx(20.0).epsilon(1e-12));
    const Psnr same = psnr(zero, zero);
    CHECK(same.identical);
    CHECK(std::isinf(same.db));
    CHECK(psnr(Tensor::full({1, 10, 10}, 0.0062), zero).db == doctest::Approx(44.152).epsilon(1e-4));
    CHECK(psnr(Tensor::full({1, 4, 4}, 2.0), Tensor::zeros({1, 4, 4}), 4.0).db ==
          doctest::Approx(10.0 * std::log10(4.0)));
    CHECK_THROWS_AS(psnr(zero, Tensor::zeros({10, 10})), ShapeMismatch);
    CHECK_THROWS_AS(psnr(zero, zero, 0.0), InvalidConfig);

    const Tensor a = oracle::random_tensor({1, 16, 16}, 3, 0.0, 1.0);
    const Tensor b = oracle::random_tensor({1, 16, 16}, 4, 0.0, 1.0);
    CHECK(std::abs(psnr(a, b).db - oracle::psnr(a, b)) < 1e-12);
    const double r = rmse(a, b);
    CHECK(std::abs(psnr(a, b).db + 10.0 * std::log10(r * r)) < 1e-10);

    const Tensor clean = make_phantom(5, 32).image;
    double previous = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.05, 0.2}) {
        const double db = psnr(with_noise(clean, amp, 7), clean).db;
        CHECK(db < previous);
        previous = db;
    }
}

TEST_CASE("ssim") {
    const Tensor a = oracle::random_tensor({1, 16, 16}, 5, 0.0, 1.0);
    const Tensor b = oracle::random_tensor({1, 16, 16}, 6, 0.0, 1.0);
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(Tensor::zeros({1, 8, 8}), Tensor::full({1, 8, 8}, 1.0)) ==
          doctest::Approx(1e-4 / 1.0001).epsilon(1e-12));
    CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b, 16, 16)) < 1e-12);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
    CHECK(ssim(a.reshape({16, 16}), b.reshape({16, 16})) == ssim(a, b));

    // Partial blocks at the border are ignored.
    const Tensor wide = oracle::random_tensor({1, 12, 20}, 7, 0.0, 1.0);
    const Tensor wide2 = oracle::random_tensor({1, 12, 20}, 8, 0.0, 1.0);
    CHECK(std::abs(ssim(wide, wide2) - oracle::ssim(wide, wide2, 12, 20)) < 1e-12);

    CHECK_THROWS_AS(ssim(Tensor::zeros({1, 7, 16}), Tensor::zeros({1, 7, 16})), TooSmall);
    CHECK_THROWS_AS(ssim(a, Tensor::zeros({1, 16, 8})), ShapeMismatch);
    CHECK_THROWS_AS(ssim(Tensor::zeros({2, 8, 8}), Tensor::zeros({2, 8, 8})), ShapeMismatch);

    for (std::uint64_t s = 0; s < 10; ++s) {
        const double v = ssim(oracle::random_tensor({1, 16, 16}, s, 0.0, 1.0),
                              oracle::random_tensor({1, 16, 16}, s + 100, 0.0, 1.0));
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("image files") {
    TempDir tmp("redct_image_test");
    const Tensor img = oracle::random_tensor({1, 9, 7}, 9, 0.0, 1.0);

    SUBCASE("16-bit PGM") {
        write_pgm(tmp.path / "a.pgm", img);
        const ImageFile back = read_pgm(tmp.path / "a.pgm");
        CHECK(back.format == ImageFormat::Pgm);
        CHECK(back.maxval == 65535);
        REQUIRE(back.image.shape() == img.shape());
        for (std::size_t i = 0; i < img.numel(); ++i) {
            CHECK(back.image[i] == std::round(img[i] * 65535.0) / 65535.0);
            CHECK(std::abs(back.image[i] - img[i]) <= 0.5 / 65535.0 + 1e-15);
        }
        const auto bytes = read_file_bytes(tmp.path / "a.pgm");
        CHECK(std::string(bytes.begin(), bytes.begin() + 13) == "P5\n7 9\n65535\n");
        CHECK(bytes.size() == 13 + 2 * 63);
        // big-endian first sample
        const unsigned first = (bytes[13] << 8) | bytes[14];
        CHECK(first == static_cast<unsigned>(std::lround(img[0] * 65535.0)));
    }
    SUBCASE("8-bit PGM and clamping") {
        write_pgm(tmp.path / "b.pgm", Tensor({1, 1, 3}, {-0.5, 0.5, 2.0}), 255);
        const ImageFile back = read_image(tmp.path / "b.pgm");
        CHECK(back.maxval == 255);
        CHECK(back.image[0] == 0.0);
        CHECK(back.image[1] == 128.0 / 255.0);
        CHECK(back.image[2] == 1.0);
    }
    SUBCASE("RTF images") {
        write_rtf(tmp.path / "c.rtf", img);
        const ImageFile back = read_image(tmp.path / "c.rtf");
        CHECK(back.format == ImageFormat::Rtf);
        CHECK(back.image.identical(img));
        write_rtf(tmp.path / "d.rtf", img.reshape({9, 7}));
        CHECK(read_image(tmp.path / "d.rtf").image.shape() == Shape{1, 9, 7});
    }
    SUBCASE("bad files") {
        std::ofstream(tmp.path / "junk.pgm") << "P2\n1 1\n255\n0\n";
        CHECK_THROWS_AS(read_image(tmp.path / "junk.pgm"), IoError);
        std::ofstream(tmp.path / "short.pgm") << "P5\n4 4\n255\nab";
        CHECK_THROWS_AS(read_pgm(tmp.path / "short.pgm"), IoError);
        CHECK_THROWS_AS(read_image(tmp.path / "none.pgm"), IoError);
    }
}

TEST_CASE("manifest") {
    TempDir tmp("redct_manifest_test");
    std::ofstream(tmp.path / "m.tsv") << "# comment\n\n1\t10000\t180\ta.rtf\tsub/b.rtf\n2\t1e3\t90\t/abs/c.rtf\td.rtf\n";
    const auto entries = read_manifest(tmp.path / "m.tsv");
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].seed == 1);
    CHECK(entries[0].photons == 1e4);
    CHECK(entries[0].views == 180);
    CHECK(entries[0].clean == tmp.path / "a.rtf");
    CHECK(entries[0].noisy == tmp.path / "sub/b.rtf");
    CHECK(entries[1].clean == fs::path("/abs/c.rtf"));
    CHECK(entries[1].photons == 1e3);

    std::ofstream(tmp.path / "bad.tsv") << "1\t2\t3\n";
    CHECK_THROWS_AS(read_manifest(tmp.path / "bad.tsv"), IoError);
    std::ofstream(tmp.path / "bad2.tsv") << "x\t2\t3\ta\tb\n";
    CHECK_THROWS_AS(read_manifest(tmp.path / "bad2.tsv"), IoError);
    CHECK_THROWS_AS(read_manifest(tmp.path / "missing.tsv"), IoError);
}

TEST_CASE("evaluate and reports") {
    TempDir tmp("redct_eval_test");

    SUBCASE("identity denoiser equals the noisy baseline") {
        const auto manifest = write_pairs(tmp.path, 3);
        const QualityReport r = evaluate(manifest, [](const Tensor& x) { return x; });
        REQUIRE(r.records.size() == 6);
        CHECK(r.manifest_id == "manifest.tsv");
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& d = r.records[2 * i];
            const auto& n = r.records[2 * i + 1];
            CHECK(d.id == "00" + std::to_string(i) + "/denoised");
            CHECK(n.id == "00" + std::to_string(i) + "/noisy");
            CHECK(d.ssim == n.ssim);
            CHECK(d.rmse == n.rmse);
            CHECK(d.psnr.db == n.psnr.db);
        }
        CHECK(r.groups() == std::vector<std::string>{"denoised", "noisy"});
        const auto den = r.aggregate("denoised");
        REQUIRE(den.has_value());
        CHECK(den->count == 3);

        // Aggregates recomputable from the records, and identical under threading.
        double mean = 0.0;
        for (std::size_t i = 0; i < 3; ++i) mean += r.records[2 * i].psnr.db;
        CHECK(std::abs(den->psnr.mean - mean / 3.0) < 1e-12);
        const QualityReport threaded = evaluate(manifest, [](const Tensor& x) { return x; }, 3);
        std::ostringstream s1, s2;
        write_report(s1, r);
        write_report(s2, threaded);
        CHECK(s1.str() == s2.str());
    }
    SUBCASE("nine pairs and the TSV schema") {
        const auto manifest = write_pairs(tmp.path, 9);
        const QualityReport r = evaluate(manifest, [](const Tensor& x) {
            std::vector<double> v(x.values().begin(), x.values().end());
            for (auto& e : v) e *= 0.9;
            return Tensor(x.shape(), std::move(v));
        });
        CHECK(r.records.size() == 18);
        std::ostringstream out;
        write_report(out, r);
        const auto lines = lines_of(out.str());
        REQUIRE(lines.size() == 1 + 1 + 18 + 4);
        CHECK(lines[0] == "# manifest\tmanifest.tsv");
        CHECK(lines[1] == "id\tssim\trmse\tpsnr_db");
        std::size_t rows = 0;
        std::vector<double> ssims;
        for (const auto& l : lines) {
            if (l.empty() || l[0] == '#' || l.rfind("id\t", 0) == 0) continue;
            const auto f = fields_of(l);
            CHECK(f.size() == 4);
            if (l.find("/denoised") != std::string::npos) ssims.push_back(std::stod(f[1]));
            ++rows;
        }
        CHECK(rows == 18);
        CHECK(lines[20].rfind("#mean/denoised\t", 0) == 0);
        CHECK(lines[21].rfind("#std/denoised\t", 0) == 0);
        CHECK(lines[22].rfind("#mean/noisy\t", 0) == 0);
        CHECK(lines[23].rfind("#std/noisy\t", 0) == 0);
        double mean = 0.0;
        for (double s : ssims) mean += s / 9.0;
        CHECK(std::abs(std::stod(fields_of(lines[20])[1]) - mean) < 1e-12);
    }
    SUBCASE("empty manifest") {
        write_manifest(tmp.path / "empty.tsv", {});
        const QualityReport r = evaluate(tmp.path / "empty.tsv", [](const Tensor& x) { return x; });
        CHECK(r.records.empty());
        CHECK_FALSE(r.aggregate().has_value());
        std::ostringstream out;
        write_report(out, r);
        CHECK(out.str().find("#mean\tNA\tNA\tNA") != std::string::npos);
    }
    SUBCASE("failures are recorded") {
        const auto manifest = write_pairs(tmp.path, 2);
        fs::remove(tmp.path / "n1.rtf");
        const QualityReport r = evaluate(manifest, [](const Tensor& x) { return x; });
        REQUIRE(r.records.size() == 4);
        CHECK(r.records[0].ok());
        CHECK_FALSE(r.records[2].ok());
        CHECK_FALSE(r.records[3].ok());
        CHECK(r.aggregate("denoised")->count == 1);

        const QualityReport bad_shape = evaluate(manifest, [](const Tensor&) { return Tensor::zeros({1, 8, 8}); });
        CHECK_FALSE(bad_shape.records[0].ok());
        CHECK(bad_shape.records[1].ok());
    }
    SUBCASE("identical records") {
        QualityReport r;
        r.records.push_back(measure("000/denoised", Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8})));
        CHECK(r.records[0].psnr.identical);
        std::ostringstream out;
        write_report(out, r);
        CHECK(out.str().find("identical") != std::string::npos);
    }
}
