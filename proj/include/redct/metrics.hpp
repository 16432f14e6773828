#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "redct/tensor.hpp"

namespace redct {

double rmse(const Tensor& a, const Tensor& b);

// PSNR in dB. `identical` is set when the mean squared error is exactly 0,
// in which case db is +infinity.
struct Psnr {
    double db = 0.0;
    bool identical = false;
};
Psnr psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SsimOptions {
    std::size_t block = 8;  // non-overlapping square blocks
    double peak = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

// Mean over full blocks of the SSIM index, using population statistics per
// block. Inputs are [1, H, W] (or [H, W]). Throws TooSmall if H or W < block.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});

struct QualityRecord {
    std::string id;
    double ssim = 0.0;
    double rmse = 0.0;
    Psnr psnr;
    std::string error;  // non-empty when the record failed

    bool ok() const { return error.empty(); }
};

struct MetricStats {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single record
};

struct QualityAggregate {
    std::size_t count = 0;
    MetricStats ssim, rmse, psnr;
    bool psnr_identical = false;  // some record was identical, PSNR stats undefined
};

// Per-record metrics and aggregates. Records are grouped by their id suffix
// ("/denoised", "/noisy"); aggregate() takes that group name.
struct QualityReport {
    std::vector<QualityRecord> records;
    std::string model_id;
    std::string manifest_id;

    std::vector<std::string> groups() const;
    // Aggregates over successful records of one group (all records for "").
    // Empty when the group has no successful record.
    std::optional<QualityAggregate> aggregate(const std::string& group = "") const;
};

QualityRecord measure(const std::string& id, const Tensor& estimate, const Tensor& reference);

// TSV: metadata comments, header "id\tssim\trmse\tpsnr_db", one row per
// record, then "#mean" and "#std" footer lines per group.
void write_report(std::ostream& out, const QualityReport& report);
void write_report(const std::filesystem::path& path, const QualityReport& report);

// One manifest line: seed, photons, views, clean image, noisy image.
struct ManifestEntry {
    std::uint64_t seed = 0;
    double photons = 0.0;
    std::size_t views = 0;
    std::filesystem::path clean;
    std::filesystem::path noisy;
};

// Tab-separated lines; '#' lines and blank lines are skipped. Relative image
// paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

using Denoiser = std::function<Tensor(const Tensor& noisy)>;

// For every manifest entry, records "<n>/denoised" then "<n>/noisy", where
// <n> is the zero-padded line index. Failures are recorded, not thrown.
QualityReport evaluate(const std::filesystem::path& manifest, const Denoiser& denoiser,
                       std::size_t threads = 1);

}  // namespace redct
