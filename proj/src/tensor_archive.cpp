#include "entcap/tensor_archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "entcap/errors.hpp"
#include "entcap/hash.hpp"

namespace entcap {

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

constexpr std::string_view kMagic = "ENTCAPT1";

template <typename T>
void put(std::string& out, T value) {
  char buffer[sizeof(T)];
  std::memcpy(buffer, &value, sizeof(T));
  out.append(buffer, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n) {
    require(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void read_doubles(double* dst, std::size_t count) {
    require(count * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("tensor archive truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string serialize_payload(const std::vector<NamedTensor>& tensors) {
  std::string out;
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    out.append(reinterpret_cast<const char*>(t.value.data()),
               static_cast<std::size_t>(t.value.size()) * sizeof(double));
  }
  return out;
}

}  // namespace

const NamedTensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string serialize_archive(const TensorArchive& archive) {
  const std::string payload = serialize_payload(archive.tensors);
  nlohmann::ordered_json manifest = archive.manifest;
  manifest["payload_sha256"] = sha256_hex(payload);
  const std::string manifest_text = manifest.dump();
  std::string out(kMagic);
  put<std::uint64_t>(out, manifest_text.size());
  out += manifest_text;
  out += payload;
  return out;
}

TensorArchive deserialize_archive(const std::string& bytes) {
  Reader reader(bytes);
  if (reader.take(kMagic.size()) != kMagic) throw ParseError("not a tensor archive (bad magic)");
  const auto manifest_size = reader.get<std::uint64_t>();
  TensorArchive archive;
  try {
    archive.manifest = nlohmann::ordered_json::parse(reader.take(manifest_size));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("tensor archive manifest: {}", e.what()));
  }
  const std::size_t payload_start = reader.pos();
  const auto count = reader.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor tensor;
    tensor.name = reader.take(reader.get<std::uint32_t>());
    const auto rows = reader.get<std::uint64_t>();
    const auto cols = reader.get<std::uint64_t>();
    tensor.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    reader.read_doubles(tensor.value.data(), rows * cols);
    archive.tensors.push_back(std::move(tensor));
  }
  if (!reader.done()) throw ParseError("tensor archive has trailing bytes");
  if (archive.manifest.contains("payload_sha256")) {
    const std::string expected = archive.manifest["payload_sha256"].get<std::string>();
    if (sha256_hex(std::string_view(bytes).substr(payload_start)) != expected) {
      throw ParseError("tensor archive payload checksum mismatch");
    }
    archive.manifest.erase("payload_sha256");
  }
  return archive;
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  const std::string bytes = serialize_archive(archive);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write failed for '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_archive(buffer.str());
}

}  // namespace entcap
