#include <doctest.h>
#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "robustssm/dataset.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/medmnist.hpp"
#include "robustssm/npy.hpp"
#include "robustssm/rng.hpp"

using namespace rssm;

namespace {

std::vector<std::uint8_t> fixture_bytes(const std::string& name) {
  return read_file_bytes(oracle::fixture(name).string());
}

// Minimal independent writer: NPY 1.0/2.0 headers and a ZIP container with
// stored or raw-deflate members.
std::vector<std::uint8_t> write_npy(const std::string& descr, const std::vector<std::size_t>& shape,
                                    const std::vector<std::uint8_t>& payload, int major) {
  std::string dims;
  for (std::size_t d : shape) dims += std::to_string(d) + ", ";
  if (shape.size() > 1) dims.resize(dims.size() - 2);
  if (shape.size() == 1) dims.pop_back();
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t prefix = major == 1 ? 10 : 12;
  while ((prefix + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::vector<std::uint8_t> out{0x93, 'N', 'U', 'M', 'P', 'Y', std::uint8_t(major), 0};
  const std::size_t len = header.size();
  for (std::size_t i = 0; i < (major == 1 ? 2U : 4U); ++i) out.push_back(std::uint8_t(len >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

void put(std::vector<std::uint8_t>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
}

std::vector<std::uint8_t> deflate_raw(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  deflateInit2(&zs, 6, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
  std::vector<std::uint8_t> out(deflateBound(&zs, in.size()) + 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

struct Member {
  std::string name;
  std::vector<std::uint8_t> data;
  bool deflated;
};

std::vector<std::uint8_t> write_zip(const std::vector<Member>& members) {
  std::vector<std::uint8_t> out, dir;
  for (const Member& m : members) {
    const std::uint32_t crc = crc32(0, m.data.data(), static_cast<uInt>(m.data.size()));
    const std::vector<std::uint8_t> body = m.deflated ? deflate_raw(m.data) : m.data;
    const std::size_t offset = out.size();
    put(out, 0x04034b50, 4);
    put(out, 20, 2);
    put(out, 0, 2);
    put(out, m.deflated ? 8 : 0, 2);
    put(out, 0, 4);
    put(out, crc, 4);
    put(out, body.size(), 4);
    put(out, m.data.size(), 4);
    put(out, m.name.size(), 2);
    put(out, 0, 2);
    out.insert(out.end(), m.name.begin(), m.name.end());
    out.insert(out.end(), body.begin(), body.end());

    put(dir, 0x02014b50, 4);
    put(dir, 20, 2);
    put(dir, 20, 2);
    put(dir, 0, 2);
    put(dir, m.deflated ? 8 : 0, 2);
    put(dir, 0, 4);
    put(dir, crc, 4);
    put(dir, body.size(), 4);
    put(dir, m.data.size(), 4);
    put(dir, m.name.size(), 2);
    put(dir, 0, 2);
    put(dir, 0, 2);
    put(dir, 0, 2);
    put(dir, 0, 2);
    put(dir, 0, 4);
    put(dir, offset, 4);
    dir.insert(dir.end(), m.name.begin(), m.name.end());
  }
  const std::size_t dir_offset = out.size();
  out.insert(out.end(), dir.begin(), dir.end());
  put(out, 0x06054b50, 4);
  put(out, 0, 4);
  put(out, members.size(), 2);
  put(out, members.size(), 2);
  put(out, dir.size(), 4);
  put(out, dir_offset, 4);
  put(out, 0, 2);
  return out;
}

void check_format_error(const std::string& fixture_name, const std::string& needle) {
  CAPTURE(fixture_name);
  const auto bytes = fixture_bytes(fixture_name);
  try {
    if (fixture_name.ends_with(".npy")) {
      parse_npy(bytes);
    } else {
      parse_npz(bytes);
    }
    FAIL("no error raised");
  } catch (const FormatError& e) {
    CAPTURE(e.what());
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
    CHECK(e.offset() <= bytes.size());
  }
}

}  // namespace

TEST_CASE("numpy-written archives parse byte-exactly") {
  for (const char* archive : {"dtypes_stored.npz", "dtypes_deflated.npz"}) {
    CAPTURE(archive);
    const auto members = parse_npz_file(oracle::fixture(archive).string());
    REQUIRE(members.size() == 4);
    const struct {
      const char* name;
      NpyDtype dtype;
      std::vector<std::size_t> shape;
    } expected[] = {{"u8", NpyDtype::u8, {3, 4}},
                    {"i64", NpyDtype::i64, {5}},
                    {"f32", NpyDtype::f32, {2, 3}},
                    {"scalar", NpyDtype::u8, {}}};
    for (const auto& e : expected) {
      CAPTURE(e.name);
      const NpyArray& a = members.at(e.name);
      CHECK(a.dtype == e.dtype);
      CHECK(a.shape == e.shape);
      CHECK(a.payload == fixture_bytes(std::string("payload_") + e.name + ".raw"));
    }
  }
}

TEST_CASE("npy header fields") {
  const NpyArray scalar = parse_npy(fixture_bytes("scalar_u8.npy"));
  CHECK(scalar.shape.empty());
  CHECK(scalar.numel() == 1);
  CHECK(scalar.payload == std::vector<std::uint8_t>{7});
  CHECK(fixture_bytes("scalar_u8.npy").size() == 129);

  const NpyArray m = parse_npy(fixture_bytes("matrix_u8.npy"));
  CHECK(m.shape == std::vector<std::size_t>{3, 4});
  CHECK(m.payload == fixture_bytes("payload_u8.raw"));

  const auto ints = parse_npz_file(oracle::fixture("dtypes_stored.npz").string()).at("i64").as_int64();
  std::vector<std::uint8_t> raw = fixture_bytes("payload_i64.raw");
  for (std::size_t i = 0; i < ints.size(); ++i) {
    std::int64_t v;
    std::memcpy(&v, raw.data() + 8 * i, 8);
    CHECK(ints[i] == v);
  }
  CHECK(dtype_descr(NpyDtype::f32) == "<f4");
  CHECK(dtype_size(NpyDtype::i64) == 8);
}

TEST_CASE("malformed inputs raise the documented errors") {
  check_format_error("bad_magic.npy", "bad npy magic");
  check_format_error("truncated.npy", "truncated");
  check_format_error("fortran.npy", "fortran_order");
  check_format_error("float64.npy", "dtype");
  check_format_error("crc_error.npz", "CRC mismatch");
  check_format_error("crc_error.npz", "'bad'");
  check_format_error("truncated.npz", "zip");
  check_format_error("not_a_zip.npz", "not a zip archive");
  check_format_error("bzip2.npz", "compression method");
  CHECK(parse_npz(fixture_bytes("empty.npz")).empty());
  CHECK_THROWS_AS(read_file_bytes("/nonexistent/archive.npz"), IoError);
}

TEST_CASE("a corrupt member does not affect its siblings") {
  const NpzReader reader(fixture_bytes("corrupt_member.npz"));
  CHECK(reader.names() == std::vector<std::string>{"first", "second"});
  CHECK(reader.read("first").payload == fixture_bytes("payload_u8.raw"));
  CHECK_THROWS_AS(reader.read("second"), FormatError);
  CHECK_THROWS_AS(reader.read("third"), SchemaError);

  const NpzReader crc(fixture_bytes("crc_error.npz"));
  CHECK_NOTHROW(crc.read("good"));
  CHECK_THROWS_AS(crc.read("bad"), FormatError);
}

TEST_CASE("round trip through an independent writer") {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rank = rng.below(4);
    std::vector<std::size_t> shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(rng.below(6));
    std::size_t numel = 1;
    for (std::size_t d : shape) numel *= d;
    const NpyDtype dtype = static_cast<NpyDtype>(rng.below(3));
    std::vector<std::uint8_t> payload(numel * dtype_size(dtype));
    for (auto& b : payload) b = std::uint8_t(rng.below(256));
    const int major = 1 + int(rng.below(2));
    const auto npy = write_npy(std::string(dtype_descr(dtype)), shape, payload, major);
    const NpyArray a = parse_npy(npy);
    CHECK(a.dtype == dtype);
    CHECK(a.shape == shape);
    CHECK(a.payload == payload);

    const bool deflated = rng.below(2) == 1;
    const auto zip = write_zip({{"x.npy", npy, deflated}, {"y.npy", npy, !deflated}});
    const auto members = parse_npz(zip);
    CHECK(members.at("x").payload == payload);
    CHECK(members.at("y").payload == payload);

    // Any single-byte truncation of the archive is rejected.
    const std::size_t cut = rng.below(zip.size());
    std::vector<std::uint8_t> shorter(zip.begin(), zip.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(parse_npz(shorter), FormatError);
  }
}

TEST_CASE("MedMNIST-layout archives") {
  const DatasetSplits gray = load_medmnist(oracle::fixture("medmnist_gray.npz").string());
  CHECK(gray.train.size() == 10);
  CHECK(gray.val.size() == 10);
  CHECK(gray.test.size() == 10);
  CHECK(gray.train.num_classes == 3);
  CHECK(gray.train.images.shape() == Shape{10, 1, 28, 28});
  CHECK(gray.test.split == Split::test);
  CHECK(gray.train.labels[4] == 1);
  CHECK(gray.train.images[0] == 1.0F);

  const DatasetSplits rgb = load_medmnist(oracle::fixture("medmnist_rgb.npz").string());
  CHECK(rgb.train.images.shape() == Shape{10, 3, 28, 28});
  // HWC -> CHW: pixel (0, 0) channel 0 is the first byte of the first image.
  const NpyArray raw = NpzReader(fixture_bytes("medmnist_rgb.npz")).read("train_images");
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(rgb.train.images[c * 784 + 29] == doctest::Approx(raw.payload[29 * 3 + c] / 255.0));
  }

  CHECK_THROWS_AS(load_medmnist(oracle::fixture("missing_member.npz").string()), SchemaError);
  CHECK_THROWS_AS(load_medmnist(oracle::fixture("dtypes_stored.npz").string()), SchemaError);

  CHECK(official_split_sizes("pathmnist")->train == 89996);
  CHECK(official_split_sizes("bloodmnist")->test == 3421);
  CHECK_FALSE(official_split_sizes("unknownmnist").has_value());
}

TEST_CASE("synthetic data") {
  SyntheticSpec spec;
  spec.samples_per_class = 20;
  const Dataset a = synthetic_dataset(spec), b = synthetic_dataset(spec);
  CHECK(bit_identical(a.images, b.images));
  CHECK(a.size() == 80);
  CHECK(a.images.shape() == Shape{80, 1, 28, 28});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.labels[i] == std::int32_t(i % 4));
  CHECK_NOTHROW(a.validate());

  const DatasetSplits s = synthetic_splits(spec, 5);
  CHECK(s.val.size() == 20);
  CHECK_FALSE(bit_identical(s.val.images, s.test.images));

  spec.seed = 8;
  CHECK_FALSE(bit_identical(synthetic_dataset(spec).images, a.images));

  // Classes are separable by their mean image: nearest class centroid of
  // the training split classifies a fresh split well above chance.
  SyntheticSpec big;
  big.samples_per_class = 100;
  const DatasetSplits splits = synthetic_splits(big, 50);
  const std::size_t px = 784;
  std::vector<double> centroid(4 * px, 0.0);
  for (std::size_t i = 0; i < splits.train.size(); ++i)
    for (std::size_t j = 0; j < px; ++j) centroid[splits.train.labels[i] * px + j] += splits.train.images[i * px + j] / 100.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < splits.test.size(); ++i) {
    double best = 1e300;
    std::int32_t arg = 0;
    for (std::int32_t c = 0; c < 4; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < px; ++j) {
        const double e = splits.test.images[i * px + j] - centroid[c * px + j];
        d += e * e;
      }
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    correct += arg == splits.test.labels[i];
  }
  CHECK(double(correct) / splits.test.size() > 0.6);
}

TEST_CASE("dataset batching") {
  SyntheticSpec spec;
  spec.samples_per_class = 5;
  const Dataset d = synthetic_dataset(spec);
  CHECK(d.num_batches(8) == 3);
  const Dataset last = d.batch(2, 8);
  CHECK(last.size() == 4);
  CHECK(last.labels[0] == d.labels[16]);
  CHECK_THROWS_AS(d.slice(5, 30), IndexError);
  CHECK_THROWS_AS(d.gather({0, 20}), IndexError);
  CHECK_THROWS_AS(d.num_batches(0), ContractError);
  Dataset bad = d;
  bad.labels[0] = 9;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
  bad = d;
  bad.images[0] = 1.5F;
  CHECK_THROWS_AS(bad.validate(), SchemaError);
}
