#include "mcn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "mcn/error.hpp"

namespace mcn {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> g(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

// Separable 'valid' filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
    const std::size_t k = g.size();
    const std::size_t ow = w - k + 1;
    const std::size_t oh = h - k + 1;
    std::vector<double> rows(h * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += g[i] * plane[y * w + x + i];
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += g[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    }
    return out;
}

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
    require_same_shape(a, b, "psnr");
    if (!(peak > 0.0)) throw ParameterError("psnr: peak must be positive");
    if (a.numel() == 0) throw DimensionError("psnr: empty images");
    auto da = a.data();
    auto db = b.data();
    double se = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(da.size());
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(peak * peak / mse);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& params) {
    require_same_shape(a, b, "ssim");
    const auto& s = a.shape();
    if (s.size() < 2 || s.size() > 4) throw DimensionError("ssim: expected 2-D to 4-D images, got " + shape_to_string(s));
    const std::size_t h = s[s.size() - 2];
    const std::size_t w = s[s.size() - 1];
    if (h < params.window || w < params.window) {
        throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                             std::to_string(params.window) + "x" + std::to_string(params.window) + " window");
    }
    const std::size_t planes = a.numel() / (h * w);
    const auto g = gaussian_window(params.window, params.sigma);
    const double c1 = (params.k1 * params.peak) * (params.k1 * params.peak);
    const double c2 = (params.k2 * params.peak) * (params.k2 * params.peak);
    auto da = a.data();
    auto db = b.data();

    double total = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            x[i] = static_cast<double>(da[p * h * w + i]);
            y[i] = static_cast<double>(db[p * h * w + i]);
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, g);
        const auto my = filter_valid(y, h, w, g);
        const auto sxx = filter_valid(xx, h, w, g);
        const auto syy = filter_valid(yy, h, w, g);
        const auto sxy = filter_valid(xy, h, w, g);
        double plane_sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            plane_sum += num / den;
        }
        total += plane_sum / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(planes);
}

double MetricsReport::mean_psnr() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.psnr_db;
    return s / static_cast<double>(rows.size());
}

double MetricsReport::mean_ssim() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.ssim;
    return s / static_cast<double>(rows.size());
}

void MetricsReport::write_csv(std::ostream& out) const {
    out << "image_id,psnr_db,ssim\n";
    for (const auto& r : rows) out << r.image_id << ',' << format_number(r.psnr_db) << ',' << format_number(r.ssim) << '\n';
    out << "mean," << format_number(mean_psnr()) << ',' << format_number(mean_ssim()) << '\n';
}

template double psnr<float>(const Tensor<float>&, const Tensor<float>&, double);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&, double);
template double ssim<float>(const Tensor<float>&, const Tensor<float>&, const SsimParams&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&, const SsimParams&);

}  // namespace mcn
