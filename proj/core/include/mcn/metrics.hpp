#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE); kPsnrIdentical when the images are equal.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

/// Mean SSIM over all valid window positions, computed per channel (and per
/// batch item) and then averaged. Accepts (H, W), (C, H, W) or (N, C, H, W).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& params = {});

struct MetricsRow {
    std::string image_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    void add(std::string id, double psnr_db, double ssim_value) { rows.push_back({std::move(id), psnr_db, ssim_value}); }
    double mean_psnr() const;
    double mean_ssim() const;
    /// `image_id,psnr_db,ssim` header, one row per image, then a `mean` row.
    void write_csv(std::ostream& out) const;
};

}  // namespace mcn
