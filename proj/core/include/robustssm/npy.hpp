#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rssm {

enum class NpyDtype { u8, i64, f32 };
std::string_view dtype_descr(NpyDtype d) noexcept;  // "|u1", "<i8", "<f4"
std::size_t dtype_size(NpyDtype d) noexcept;

struct NpyArray {
  NpyDtype dtype = NpyDtype::u8;
  std::vector<std::size_t> shape;
  bool fortran_order = false;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const noexcept;
  std::vector<std::int64_t> as_int64() const;
  std::vector<float> as_float() const;
};

// Parses a complete .npy stream (format 1.0 or 2.0). Only C-order
// little-endian |u1, <i8 and <f4 are accepted; anything else raises
// FormatError with the offending byte offset.
NpyArray parse_npy(std::span<const std::uint8_t> bytes);

// Members of a .npz (ZIP) archive keyed by name without the ".npy" suffix.
// Stored and deflated members are supported; every member's CRC-32 is
// verified. Errors name the failing member.
std::map<std::string, NpyArray> parse_npz(std::span<const std::uint8_t> bytes);
std::map<std::string, NpyArray> parse_npz_file(const std::string& path);

// Random access to the members of an archive. The central directory is read
// up front; each member is inflated, CRC-checked and parsed on demand, so a
// corrupt member does not affect reads of the others.
class NpzReader {
 public:
  explicit NpzReader(std::vector<std::uint8_t> bytes);

  // Member names without the ".npy" suffix, in directory order.
  std::vector<std::string> names() const;
  bool contains(const std::string& name) const;
  NpyArray read(const std::string& name) const;
  // Decompressed, CRC-verified member bytes.
  std::vector<std::uint8_t> read_raw(const std::string& name) const;

 private:
  struct Member {
    std::string name;
    std::uint16_t method = 0;
    std::uint32_t crc = 0;
    std::uint64_t compressed_size = 0;
    std::uint64_t size = 0;
    std::uint64_t local_offset = 0;
  };
  const Member& find(const std::string& name) const;
  std::vector<std::uint8_t> bytes_;
  std::vector<Member> members_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace rssm
