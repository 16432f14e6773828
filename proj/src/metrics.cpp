#include "redct/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "redct/errors.hpp"
#include "redct/image_io.hpp"

namespace redct {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                            shape_string(b.shape()) + " differ");
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
    if (a.numel() == 0) throw ShapeMismatch("metric of empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

std::pair<std::size_t, std::size_t> plane_extents(const Tensor& t) {
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    if (t.rank() == 3 && t.dim(0) == 1) return {t.dim(1), t.dim(2)};
    throw ShapeMismatch("ssim expects [1,H,W] or [H,W], got " + shape_string(t.shape()));
}

std::string group_of(const std::string& id) {
    const auto slash = id.rfind('/');
    return slash == std::string::npos ? std::string{} : id.substr(slash + 1);
}

MetricStats stats(const std::vector<double>& v) {
    MetricStats s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
    }
    return s;
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double rmse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "rmse");
    return std::sqrt(mean_squared_error(a, b));
}

Psnr psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    if (!(peak > 0.0)) throw InvalidConfig("psnr peak must be positive");
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(peak * peak / mse), false};
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options) {
    require_same_shape(a, b, "ssim");
    const auto [h, w] = plane_extents(a);
    const std::size_t bs = options.block;
    if (bs == 0) throw InvalidConfig("ssim block size must be positive");
    if (h < bs || w < bs) throw TooSmall("ssim needs at least one " + std::to_string(bs) + "x" + std::to_string(bs) + " block");
    const double c1 = (options.k1 * options.peak) * (options.k1 * options.peak);
    const double c2 = (options.k2 * options.peak) * (options.k2 * options.peak);
    const double n = static_cast<double>(bs * bs);
    const double* pa = a.data();
    const double* pb = b.data();

    double total = 0.0;
    std::size_t blocks = 0;
    for (std::size_t by = 0; by + bs <= h; by += bs) {
        for (std::size_t bx = 0; bx + bs <= w; bx += bs) {
            double ma = 0.0, mb = 0.0;
            for (std::size_t y = by; y < by + bs; ++y)
                for (std::size_t x = bx; x < bx + bs; ++x) {
                    ma += pa[y * w + x];
                    mb += pb[y * w + x];
                }
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (std::size_t y = by; y < by + bs; ++y)
                for (std::size_t x = bx; x < bx + bs; ++x) {
                    const double da = pa[y * w + x] - ma;
                    const double db = pb[y * w + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++blocks;
        }
    }
    return total / static_cast<double>(blocks);
}

std::vector<std::string> QualityReport::groups() const {
    std::vector<std::string> out;
    for (const auto& r : records) {
        auto g = group_of(r.id);
        if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(std::move(g));
    }
    return out;
}

std::optional<QualityAggregate> QualityReport::aggregate(const std::string& group) const {
    std::vector<double> s, r, p;
    QualityAggregate agg;
    for (const auto& rec : records) {
        if (!rec.ok() || (!group.empty() && group_of(rec.id) != group)) continue;
        s.push_back(rec.ssim);
        r.push_back(rec.rmse);
        if (rec.psnr.identical) agg.psnr_identical = true;
        else p.push_back(rec.psnr.db);
    }
    if (s.empty()) return std::nullopt;
    agg.count = s.size();
    agg.ssim = stats(s);
    agg.rmse = stats(r);
    if (!agg.psnr_identical) agg.psnr = stats(p);
    return agg;
}

QualityRecord measure(const std::string& id, const Tensor& estimate, const Tensor& reference) {
    QualityRecord rec;
    rec.id = id;
    rec.ssim = ssim(estimate, reference);
    rec.rmse = rmse(estimate, reference);
    rec.psnr = psnr(estimate, reference);
    return rec;
}

void write_report(std::ostream& out, const QualityReport& report) {
    if (!report.model_id.empty()) out << "# model\t" << report.model_id << '\n';
    if (!report.manifest_id.empty()) out << "# manifest\t" << report.manifest_id << '\n';
    out << "id\tssim\trmse\tpsnr_db\n";
    for (const auto& r : report.records) {
        if (!r.ok()) {
            out << r.id << "\tNA\tNA\tNA\t# " << r.error << '\n';
            continue;
        }
        out << r.id << '\t' << fmt(r.ssim) << '\t' << fmt(r.rmse) << '\t'
            << (r.psnr.identical ? std::string("identical") : fmt(r.psnr.db)) << '\n';
    }
    auto groups = report.groups();
    if (groups.empty()) groups.emplace_back();
    for (const auto& g : groups) {
        const std::string suffix = g.empty() ? "" : "/" + g;
        const auto agg = report.aggregate(g);
        if (!agg) {
            out << "#mean" << suffix << "\tNA\tNA\tNA\n#std" << suffix << "\tNA\tNA\tNA\n";
            continue;
        }
        const auto psnr_mean = agg->psnr_identical ? std::string("identical") : fmt(agg->psnr.mean);
        const auto psnr_std = agg->psnr_identical ? std::string("identical") : fmt(agg->psnr.std);
        out << "#mean" << suffix << '\t' << fmt(agg->ssim.mean) << '\t' << fmt(agg->rmse.mean) << '\t' << psnr_mean
            << '\n';
        out << "#std" << suffix << '\t' << fmt(agg->ssim.std) << '\t' << fmt(agg->rmse.std) << '\t' << psnr_std
            << '\n';
    }
}

void write_report(const std::filesystem::path& path, const QualityReport& report) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    write_report(out, report);
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, '\t')) fields.push_back(f);
        if (fields.size() != 5)
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
        ManifestEntry e;
        try {
            e.seed = std::stoull(fields[0]);
            e.photons = std::stod(fields[1]);
            e.views = std::stoul(fields[2]);
        } catch (const std::logic_error&) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        const std::filesystem::path clean(fields[3]), noisy(fields[4]);
        e.clean = clean.is_absolute() ? clean : base / clean;
        e.noisy = noisy.is_absolute() ? noisy : base / noisy;
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& e : entries) {
        out << e.seed << '\t' << fmt(e.photons) << '\t' << e.views << '\t' << e.clean.generic_string() << '\t'
            << e.noisy.generic_string() << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

QualityReport evaluate(const std::filesystem::path& manifest, const Denoiser& denoiser, std::size_t threads) {
    QualityReport report;
    report.manifest_id = manifest.filename().string();
    const auto entries = read_manifest(manifest);
    report.records.resize(2 * entries.size());

    auto process = [&](std::size_t i) {
        char idx[16];
        std::snprintf(idx, sizeof idx, "%03zu", i);
        auto& den = report.records[2 * i];
        auto& noi = report.records[2 * i + 1];
        den.id = std::string(idx) + "/denoised";
        noi.id = std::string(idx) + "/noisy";
        bool baseline_done = false;
        try {
            const Tensor clean = read_image(entries[i].clean).image;
            const Tensor noisy = read_image(entries[i].noisy).image;
            noi = measure(noi.id, noisy, clean);
            baseline_done = true;
            den = measure(den.id, denoiser(noisy), clean);
        } catch (const std::exception& e) {
            den.error = e.what();
            if (!baseline_done) noi.error = e.what();
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, entries.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < entries.size(); ++i) process(i);
        return report;
    }
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < entries.size(); i = next++) process(i);
            });
        }
    }
    return report;
}

}  // namespace redct
