#include "robustssm/npy.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "robustssm/errors.hpp"

namespace rssm {

std::string_view dtype_descr(NpyDtype d) noexcept {
  switch (d) {
    case NpyDtype::u8: return "|u1";
    case NpyDtype::i64: return "<i8";
    case NpyDtype::f32: return "<f4";
  }
  return "?";
}

std::size_t dtype_size(NpyDtype d) noexcept {
  switch (d) {
    case NpyDtype::u8: return 1;
    case NpyDtype::i64: return 8;
    case NpyDtype::f32: return 4;
  }
  return 0;
}

std::size_t NpyArray::numel() const noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::vector<std::int64_t> NpyArray::as_int64() const {
  std::vector<std::int64_t> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (dtype) {
      case NpyDtype::u8: out[i] = payload[i]; break;
      case NpyDtype::i64: {
        std::uint64_t v = 0;
        for (int b = 7; b >= 0; --b) v = (v << 8) | payload[i * 8 + static_cast<std::size_t>(b)];
        out[i] = static_cast<std::int64_t>(v);
        break;
      }
      case NpyDtype::f32: {
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) v = (v << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
        float f;
        std::memcpy(&f, &v, 4);
        out[i] = static_cast<std::int64_t>(f);
        break;
      }
    }
  }
  return out;
}

std::vector<float> NpyArray::as_float() const {
  std::vector<float> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (dtype) {
      case NpyDtype::u8: out[i] = static_cast<float>(payload[i]); break;
      case NpyDtype::i64: {
        std::uint64_t v = 0;
        for (int b = 7; b >= 0; --b) v = (v << 8) | payload[i * 8 + static_cast<std::size_t>(b)];
        out[i] = static_cast<float>(static_cast<std::int64_t>(v));
        break;
      }
      case NpyDtype::f32: {
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) v = (v << 8) | payload[i * 4 + static_cast<std::size_t>(b)];
        std::memcpy(&out[i], &v, 4);
        break;
      }
    }
  }
  return out;
}

namespace {

std::uint64_t read_le(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t width,
                      const char* what) {
  if (offset + width > bytes.size()) throw FormatError(std::string("truncated ") + what, bytes.size());
  std::uint64_t v = 0;
  for (std::size_t i = width; i-- > 0;) v = (v << 8) | bytes[offset + i];
  return v;
}

// Minimal reader for the Python dict literal in an NPY header.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  void parse(std::string& descr, bool& fortran, std::vector<std::size_t>& shape) {
    bool seen_descr = false, seen_fortran = false, seen_shape = false;
    skip_ws();
    expect('{');
    for (;;) {
      skip_ws();
      if (peek() == '}') break;
      const std::string key = quoted();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        descr = quoted();
        seen_descr = true;
      } else if (key == "fortran_order") {
        fortran = boolean();
        seen_fortran = true;
      } else if (key == "shape") {
        shape = tuple();
        seen_shape = true;
      } else {
        fail("unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      if (peek() != '}') fail("expected ',' or '}' in header");
    }
    if (!seen_descr || !seen_fortran || !seen_shape) fail("header lacks descr/fortran_order/shape");
  }

  std::size_t offset() const noexcept { return base_ + pos_; }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw FormatError("npy header: " + what, offset()); }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string quoted() {
    const char q = peek();
    if (q != '\'' && q != '"') fail("expected a quoted string");
    ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != q) ++pos_;
    if (pos_ >= text_.size()) fail("unterminated string");
    std::string s(text_.substr(start, pos_ - start));
    ++pos_;
    return s;
  }
  bool boolean() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }
  std::vector<std::size_t> tuple() {
    expect('(');
    std::vector<std::size_t> dims;
    for (;;) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected a dimension");
      std::size_t v = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + static_cast<std::size_t>(text_[pos_] - '0');
        ++pos_;
      }
      // numpy writes long dims as e.g. "3L" on Python 2.
      if (peek() == 'L') ++pos_;
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

constexpr std::uint8_t kNpyMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};

}  // namespace

NpyArray parse_npy(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kNpyMagic, 6) != 0) {
    throw FormatError("bad npy magic", 0);
  }
  const std::uint64_t major = read_le(bytes, 6, 1, "npy version");
  const std::uint64_t minor = read_le(bytes, 7, 1, "npy version");
  std::size_t header_len = 0, header_start = 0;
  if (major == 1 && minor == 0) {
    header_len = static_cast<std::size_t>(read_le(bytes, 8, 2, "npy header length"));
    header_start = 10;
  } else if (major == 2 && minor == 0) {
    header_len = static_cast<std::size_t>(read_le(bytes, 8, 4, "npy header length"));
    header_start = 12;
  } else {
    throw FormatError("unsupported npy version " + std::to_string(major) + "." + std::to_string(minor), 6);
  }
  if (header_start + header_len > bytes.size()) throw FormatError("truncated npy header", bytes.size());

  const std::string_view text(reinterpret_cast<const char*>(bytes.data()) + header_start, header_len);
  std::string descr;
  bool fortran = false;
  NpyArray arr;
  HeaderParser(text, header_start).parse(descr, fortran, arr.shape);

  if (descr == "|u1" || descr == "<u1" || descr == "u1") {
    arr.dtype = NpyDtype::u8;
  } else if (descr == "<i8") {
    arr.dtype = NpyDtype::i64;
  } else if (descr == "<f4") {
    arr.dtype = NpyDtype::f32;
  } else {
    throw FormatError("unsupported npy dtype '" + descr + "'", header_start);
  }
  if (fortran) throw FormatError("unsupported layout: fortran_order=True", header_start);

  const std::size_t data_start = header_start + header_len;
  const std::size_t need = arr.numel() * dtype_size(arr.dtype);
  const std::size_t have = bytes.size() - data_start;
  if (have < need) {
    throw FormatError("truncated npy payload (" + std::to_string(have) + " of " +
                          std::to_string(need) + " bytes)",
                      bytes.size());
  }
  if (have > need) throw FormatError("trailing bytes after npy payload", data_start + need);
  arr.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start), bytes.end());
  return arr;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEocdSig = 0x06054b50;
constexpr std::uint32_t kEocd64LocatorSig = 0x07064b50;
constexpr std::uint32_t kEocd64Sig = 0x06064b50;

std::string strip_npy(std::string name) {
  if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".npy") == 0) name.resize(name.size() - 4);
  return name;
}

}  // namespace

NpzReader::NpzReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
  const std::span<const std::uint8_t> b(bytes_);
  if (b.size() < 22) throw FormatError("not a zip archive (too short)", 0);
  // The end-of-central-directory record may be followed by a comment of up
  // to 65535 bytes.
  std::size_t eocd = b.size();
  const std::size_t lowest = b.size() >= 22 + 65535 ? b.size() - 22 - 65535 : 0;
  for (std::size_t pos = b.size() - 22 + 1; pos-- > lowest;) {
    if (read_le(b, pos, 4, "zip") == kEocdSig) {
      eocd = pos;
      break;
    }
  }
  if (eocd == b.size()) throw FormatError("not a zip archive (no end of central directory)", 0);

  std::uint64_t count = read_le(b, eocd + 10, 2, "zip directory");
  std::uint64_t dir_size = read_le(b, eocd + 12, 4, "zip directory");
  std::uint64_t dir_offset = read_le(b, eocd + 16, 4, "zip directory");
  if ((count == 0xFFFF || dir_offset == 0xFFFFFFFF || dir_size == 0xFFFFFFFF) && eocd >= 20 &&
      read_le(b, eocd - 20, 4, "zip64 locator") == kEocd64LocatorSig) {
    const std::size_t rec = static_cast<std::size_t>(read_le(b, eocd - 20 + 8, 8, "zip64 locator"));
    if (read_le(b, rec, 4, "zip64 directory") != kEocd64Sig) {
      throw FormatError("bad zip64 end of central directory", rec);
    }
    count = read_le(b, rec + 32, 8, "zip64 directory");
    dir_size = read_le(b, rec + 40, 8, "zip64 directory");
    dir_offset = read_le(b, rec + 48, 8, "zip64 directory");
  }
  if (dir_offset + dir_size > b.size()) throw FormatError("central directory out of range", eocd);

  std::size_t pos = static_cast<std::size_t>(dir_offset);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (read_le(b, pos, 4, "zip directory entry") != kCentralSig) {
      throw FormatError("bad central directory entry signature", pos);
    }
    Member m;
    const std::uint64_t flags = read_le(b, pos + 8, 2, "zip directory entry");
    m.method = static_cast<std::uint16_t>(read_le(b, pos + 10, 2, "zip directory entry"));
    m.crc = static_cast<std::uint32_t>(read_le(b, pos + 16, 4, "zip directory entry"));
    m.compressed_size = read_le(b, pos + 20, 4, "zip directory entry");
    m.size = read_le(b, pos + 24, 4, "zip directory entry");
    const std::size_t name_len = static_cast<std::size_t>(read_le(b, pos + 28, 2, "zip directory entry"));
    const std::size_t extra_len = static_cast<std::size_t>(read_le(b, pos + 30, 2, "zip directory entry"));
    const std::size_t comment_len = static_cast<std::size_t>(read_le(b, pos + 32, 2, "zip directory entry"));
    m.local_offset = read_le(b, pos + 42, 4, "zip directory entry");
    if (pos + 46 + name_len + extra_len + comment_len > b.size()) {
      throw FormatError("truncated central directory entry", pos);
    }
    if (flags & 0x1) throw FormatError("encrypted zip members are not supported", pos);
    m.name = strip_npy(std::string(reinterpret_cast<const char*>(b.data()) + pos + 46, name_len));

    // Zip64 extended information replaces saturated 32-bit fields in order.
    std::size_t ex = pos + 46 + name_len;
    const std::size_t ex_end = ex + extra_len;
    while (ex + 4 <= ex_end) {
      const std::uint64_t id = read_le(b, ex, 2, "zip extra field");
      const std::size_t len = static_cast<std::size_t>(read_le(b, ex + 2, 2, "zip extra field"));
      if (id == 0x0001) {
        std::size_t f = ex + 4;
        if (m.size == 0xFFFFFFFF) {
          m.size = read_le(b, f, 8, "zip64 extra");
          f += 8;
        }
        if (m.compressed_size == 0xFFFFFFFF) {
          m.compressed_size = read_le(b, f, 8, "zip64 extra");
          f += 8;
        }
        if (m.local_offset == 0xFFFFFFFF) m.local_offset = read_le(b, f, 8, "zip64 extra");
      }
      ex += 4 + len;
    }
    members_.push_back(std::move(m));
    pos += 46 + name_len + extra_len + comment_len;
  }
}

std::vector<std::string> NpzReader::names() const {
  std::vector<std::string> out;
  out.reserve(members_.size());
  for (const Member& m : members_) out.push_back(m.name);
  return out;
}

bool NpzReader::contains(const std::string& name) const {
  for (const Member& m : members_)
    if (m.name == name) return true;
  return false;
}

const NpzReader::Member& NpzReader::find(const std::string& name) const {
  for (const Member& m : members_)
    if (m.name == name) return m;
  throw SchemaError("archive has no member '" + name + "'");
}

std::vector<std::uint8_t> NpzReader::read_raw(const std::string& name) const {
  const Member& m = find(name);
  const std::span<const std::uint8_t> b(bytes_);
  const std::string tag = "member '" + m.name + "': ";
  const std::size_t lo = static_cast<std::size_t>(m.local_offset);
  if (read_le(b, lo, 4, "zip local header") != kLocalSig) {
    throw FormatError(tag + "bad local header signature", lo);
  }
  const std::size_t name_len = static_cast<std::size_t>(read_le(b, lo + 26, 2, "zip local header"));
  const std::size_t extra_len = static_cast<std::size_t>(read_le(b, lo + 28, 2, "zip local header"));
  const std::size_t data = lo + 30 + name_len + extra_len;
  if (data + m.compressed_size > b.size()) throw FormatError(tag + "truncated member data", b.size());

  std::vector<std::uint8_t> out;
  if (m.method == 0) {
    if (m.compressed_size != m.size) throw FormatError(tag + "stored size mismatch", lo);
    out.assign(b.begin() + static_cast<std::ptrdiff_t>(data),
               b.begin() + static_cast<std::ptrdiff_t>(data + m.size));
  } else if (m.method == 8) {
    if (m.size > 0xFFFFFFFFULL || m.compressed_size > 0xFFFFFFFFULL) {
      throw FormatError(tag + "deflated members over 4 GiB are not supported", lo);
    }
    out.resize(static_cast<std::size_t>(m.size));
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError(tag + "inflate init failed", data);
    zs.next_in = const_cast<Bytef*>(b.data() + data);
    zs.avail_in = static_cast<uInt>(m.compressed_size);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const std::size_t consumed = static_cast<std::size_t>(m.compressed_size) - zs.avail_in;
    const bool complete = rc == Z_STREAM_END && zs.avail_out == 0;
    inflateEnd(&zs);
    if (!complete) throw FormatError(tag + "corrupt deflate stream", data + consumed);
  } else {
    throw FormatError(tag + "unsupported compression method " + std::to_string(m.method), lo);
  }

  std::uint32_t crc = 0;
  std::size_t done = 0;
  while (done < out.size()) {
    const std::size_t chunk = std::min<std::size_t>(out.size() - done, std::size_t{1} << 30);
    crc = static_cast<std::uint32_t>(::crc32(crc, out.data() + done, static_cast<uInt>(chunk)));
    done += chunk;
  }
  if (crc != m.crc) throw FormatError(tag + "CRC mismatch", data);
  return out;
}

NpyArray NpzReader::read(const std::string& name) const {
  const std::vector<std::uint8_t> raw = read_raw(name);
  try {
    return parse_npy(raw);
  } catch (const FormatError& e) {
    throw FormatError("member '" + name + "': " + e.detail(), e.offset());
  }
}

std::map<std::string, NpyArray> parse_npz(std::span<const std::uint8_t> bytes) {
  NpzReader reader(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
  std::map<std::string, NpyArray> out;
  for (const std::string& name : reader.names()) out.emplace(name, reader.read(name));
  return out;
}

std::map<std::string, NpyArray> parse_npz_file(const std::string& path) {
  NpzReader reader(read_file_bytes(path));
  std::map<std::string, NpyArray> out;
  for (const std::string& name : reader.names()) out.emplace(name, reader.read(name));
  return out;
}

}  // namespace rssm
