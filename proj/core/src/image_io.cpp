#include "mcn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <vector>

#include "mcn/error.hpp"

namespace mcn {

void write_ppm(std::ostream& out, const Tensor<float>& rgb) {
    const auto& s = rgb.shape();
    const bool ok = (s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[0] == 1 && s[1] == 3);
    if (!ok) throw DimensionError("write_ppm: expected (3,H,W) or (1,3,H,W), got " + shape_to_string(s));
    const std::size_t h = s[s.size() - 2];
    const std::size_t w = s[s.size() - 1];
    auto d = rgb.data();
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(d[(c * h + y) * w + x]), 0.0, 1.0);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(std::pow(v, 1.0 / 2.2) * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

void save_ppm(const std::filesystem::path& path, const Tensor<float>& rgb) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    write_ppm(out, rgb);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace mcn
