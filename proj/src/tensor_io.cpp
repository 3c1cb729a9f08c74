#include "vidistill/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

namespace vidistill {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

namespace {

constexpr std::size_t kMaxElements = std::size_t{1} << 34;

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U take(std::span<const std::uint8_t> bytes, std::size_t& offset, const char* field) {
  if (bytes.size() - offset < sizeof(U)) {
    throw FormatError(std::string("tensor container truncated while reading ") + field, offset);
  }
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  offset += sizeof(U);
  return value;
}

}  // namespace

void append_record(std::vector<std::uint8_t>& out, const Tensor& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ShapeError("save_tensor: rank too large");
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put<std::uint16_t>(out, kTensorFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (const auto d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("save_tensor: dimension exceeds u32");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  const auto data = t.data();
  const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
  out.insert(out.end(), p, p + data.size_bytes());
}

std::vector<std::uint8_t> encode_tensors(std::span<const Tensor> tensors) {
  std::vector<std::uint8_t> out;
  for (const auto& t : tensors) append_record(out, t);
  return out;
}

Tensor decode_record(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() - offset < 4) throw FormatError("tensor container truncated in magic", offset);
  if (std::memcmp(bytes.data() + offset, kTensorMagic, 4) != 0) throw FormatError("bad magic, expected VCT1", offset);
  offset += 4;
  const auto version_at = offset;
  const auto version = take<std::uint16_t>(bytes, offset, "version");
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version), version_at);
  }
  const auto rank = take<std::uint8_t>(bytes, offset, "rank");
  Shape shape;
  std::size_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto dim_at = offset;
    const auto d = take<std::uint32_t>(bytes, offset, "dims");
    if (d == 0) throw FormatError("zero-sized dimension", dim_at);
    if (count > kMaxElements / d) throw FormatError("shape overflow", dim_at);
    count *= d;
    shape.push_back(d);
  }
  if ((bytes.size() - offset) / sizeof(float) < count) {
    throw FormatError("tensor payload truncated: record at byte " + std::to_string(start) + " needs " +
                          std::to_string(count) + " floats",
                      offset);
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + offset, count * sizeof(float));
  offset += count * sizeof(float);
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  std::vector<Tensor> out;
  std::size_t offset = 0;
  if (bytes.empty()) throw FormatError("empty tensor container", 0);
  while (offset < bytes.size()) out.push_back(decode_record(bytes, offset));
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { save_tensors(path, std::span(&t, 1)); }

Tensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t offset = 0;
  auto t = decode_record(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after tensor record", offset);
  return t;
}

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  write_file(path, encode_tensors(tensors));
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

}  // namespace vidistill
