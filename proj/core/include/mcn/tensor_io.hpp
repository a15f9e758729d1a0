#pragma once

// MCNT tensor files and MCNC checkpoints.
//
// MCNT layout (all integers little-endian):
//   "MCNT" | u16 version = 1 | u8 dtype | u8 rank | rank x u32 extents | payload
// dtype 0 = IEEE-754 binary32, dtype 1 = u16. Payload is row-major.
//
// MCNC layout:
//   "MCNC" | u32 tensor count | per tensor: u16 name length, UTF-8 name, MCNT blob

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

enum class McntDtype : std::uint8_t { F32 = 0, U16 = 1 };

// Decoded MCNT payload in its stored element type.
struct McntBlob {
    Shape shape;
    std::variant<std::vector<float>, std::vector<std::uint16_t>> values;

    McntDtype dtype() const { return values.index() == 0 ? McntDtype::F32 : McntDtype::U16; }
    // Values widened to float regardless of dtype.
    Tensor<float> to_tensor() const;
};

void write_mcnt(std::ostream& out, const Tensor<float>& tensor);
void write_mcnt_u16(std::ostream& out, const Shape& shape, const std::vector<std::uint16_t>& values);
McntBlob read_mcnt(std::istream& in);

void save_mcnt(const std::filesystem::path& path, const Tensor<float>& tensor);
McntBlob load_mcnt(const std::filesystem::path& path);

// Ordered named tensor set.
class Checkpoint {
public:
    void set(std::string name, Tensor<float> tensor);
    const Tensor<float>* find(const std::string& name) const;
    const Tensor<float>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    const std::vector<std::pair<std::string, Tensor<float>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void write(std::ostream& out) const;
    static Checkpoint read(std::istream& in);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, Tensor<float>>> entries_;
};

}  // namespace mcn
