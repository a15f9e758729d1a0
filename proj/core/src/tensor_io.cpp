#include "mcn/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mcn/error.hpp"

namespace mcn {

namespace {

constexpr std::array<char, 4> kTensorMagic{'M', 'C', 'N', 'T'};
constexpr std::array<char, 4> kCheckpointMagic{'M', 'C', 'N', 'C'};
constexpr std::uint16_t kMcntVersion = 1;

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<unsigned char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
    put_bytes(out, bytes.data(), bytes.size());
}

void get_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(std::string("truncated stream while reading ") + what);
    }
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(U)> bytes{};
    get_bytes(in, bytes.data(), bytes.size(), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
    return value;
}

void write_header(std::ostream& out, McntDtype dtype, const Shape& shape) {
    if (shape.size() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("MCNT: rank too large");
    put_bytes(out, kTensorMagic.data(), kTensorMagic.size());
    put_le<std::uint16_t>(out, kMcntVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) {
        if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("MCNT: extent exceeds u32");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
}

}  // namespace

Tensor<float> McntBlob::to_tensor() const {
    if (const auto* f = std::get_if<std::vector<float>>(&values)) return Tensor<float>(shape, *f);
    const auto& u = std::get<std::vector<std::uint16_t>>(values);
    std::vector<float> out(u.begin(), u.end());
    return Tensor<float>(shape, std::move(out));
}

void write_mcnt(std::ostream& out, const Tensor<float>& tensor) {
    write_header(out, McntDtype::F32, tensor.shape());
    for (float v : tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw IoError("MCNT: write failed");
}

void write_mcnt_u16(std::ostream& out, const Shape& shape, const std::vector<std::uint16_t>& values) {
    if (shape_numel(shape) != values.size()) throw DimensionError("MCNT: u16 payload does not match shape");
    write_header(out, McntDtype::U16, shape);
    for (auto v : values) put_le<std::uint16_t>(out, v);
    if (!out) throw IoError("MCNT: write failed");
}

McntBlob read_mcnt(std::istream& in) {
    std::array<char, 4> magic{};
    get_bytes(in, magic.data(), magic.size(), "MCNT magic");
    if (magic != kTensorMagic) throw FormatError("MCNT: bad magic bytes");
    const auto version = get_le<std::uint16_t>(in, "MCNT version");
    if (version != kMcntVersion) throw FormatError("MCNT: unsupported version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(in, "MCNT dtype");
    const auto rank = get_le<std::uint8_t>(in, "MCNT rank");

    McntBlob blob;
    blob.shape.resize(rank);
    for (auto& e : blob.shape) e = get_le<std::uint32_t>(in, "MCNT extents");
    const std::size_t n = shape_numel(blob.shape);

    if (dtype == static_cast<std::uint8_t>(McntDtype::F32)) {
        std::vector<float> v(n);
        for (auto& x : v) x = std::bit_cast<float>(get_le<std::uint32_t>(in, "MCNT payload"));
        blob.values = std::move(v);
    } else if (dtype == static_cast<std::uint8_t>(McntDtype::U16)) {
        std::vector<std::uint16_t> v(n);
        for (auto& x : v) x = get_le<std::uint16_t>(in, "MCNT payload");
        blob.values = std::move(v);
    } else {
        throw FormatError("MCNT: unknown dtype " + std::to_string(dtype));
    }
    return blob;
}

void save_mcnt(const std::filesystem::path& path, const Tensor<float>& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_mcnt(out, tensor);
}

McntBlob load_mcnt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_mcnt(in);
}

void Checkpoint::set(std::string name, Tensor<float> tensor) {
    for (auto& [n, t] : entries_) {
        if (n == name) {
            t = std::move(tensor);
            return;
        }
    }
    entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw FormatError("checkpoint has no tensor named '" + name + "'");
    return *t;
}

void Checkpoint::write(std::ostream& out) const {
    put_bytes(out, kCheckpointMagic.data(), kCheckpointMagic.size());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, tensor] : entries_) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("MCNC: name too long");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        put_bytes(out, name.data(), name.size());
        write_mcnt(out, tensor);
    }
    if (!out) throw IoError("MCNC: write failed");
}

Checkpoint Checkpoint::read(std::istream& in) {
    std::array<char, 4> magic{};
    get_bytes(in, magic.data(), magic.size(), "MCNC magic");
    if (magic != kCheckpointMagic) throw FormatError("MCNC: bad magic bytes");
    const auto count = get_le<std::uint32_t>(in, "MCNC count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_le<std::uint16_t>(in, "MCNC name length");
        std::string name(len, '\0');
        get_bytes(in, name.data(), len, "MCNC name");
        ckpt.entries_.emplace_back(std::move(name), read_mcnt(in).to_tensor());
    }
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write(out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read(in);
}

}  // namespace mcn
