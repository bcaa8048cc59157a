#include "tcoder/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace tcoder {
namespace {

constexpr std::size_t kMagicLen = 6;

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

std::size_t element_size(Precision p) { return p == Precision::f32 ? 4 : 8; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw CheckpointError("checkpoint: unknown precision '" + s + "'");
}

template <typename Scalar>
void encode(const Scalar* src, std::size_t count, std::vector<std::uint8_t>& out) {
  out.resize(count * sizeof(Scalar));
  std::memcpy(out.data(), src, out.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i)
      std::reverse(out.begin() + i * sizeof(Scalar), out.begin() + (i + 1) * sizeof(Scalar));
  }
}

template <typename Scalar>
void decode(const std::vector<std::uint8_t>& in, Scalar* dst, std::size_t count) {
  std::vector<std::uint8_t> tmp(in);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i)
      std::reverse(tmp.begin() + i * sizeof(Scalar), tmp.begin() + (i + 1) * sizeof(Scalar));
  }
  std::memcpy(dst, tmp.data(), count * sizeof(Scalar));
}

}  // namespace

const TensorRecord& CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw CheckpointError("checkpoint: no tensor named '" + name + "'");
}

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointFile& file) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["meta"] = file.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : file.tensors) {
    std::uint64_t count = 1;
    for (Index e : t.shape) count *= static_cast<std::uint64_t>(e);
    if (count * element_size(t.precision) != t.payload.size())
      throw CheckpointError("checkpoint: payload size of '" + t.name + "' does not match its shape");
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.shape},
                                   {"precision", to_string(t.precision)},
                                   {"offset", offset},
                                   {"nbytes", t.payload.size()}});
    offset += t.payload.size();
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : file.tensors) out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

CheckpointFile parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0)
    throw CheckpointError("checkpoint: bad magic");
  const std::uint64_t len = get_u64_le(bytes.data() + kMagicLen);
  const std::size_t payload_start = kMagicLen + 8 + len;
  if (len > bytes.size() || payload_start > bytes.size()) throw CheckpointError("checkpoint: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kMagicLen + 8, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("version", -1) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");

  CheckpointFile file;
  file.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    TensorRecord t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<Index>>();
    t.precision = parse_precision(entry.at("precision").get<std::string>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (payload_start + offset + nbytes > bytes.size())
      throw CheckpointError("checkpoint: payload of '" + t.name + "' runs past end of file");
    const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(payload_start + offset);
    t.payload.assign(begin, begin + static_cast<std::ptrdiff_t>(nbytes));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const auto bytes = serialize_checkpoint(file);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

template <typename Scalar>
TensorRecord to_record(std::string name, const Matrix<Scalar>& m) {
  TensorRecord t{std::move(name), {m.rows(), m.cols()}, precision_of<Scalar>(), {}};
  encode(m.data(), static_cast<std::size_t>(m.size()), t.payload);
  return t;
}

template <typename Scalar>
Matrix<Scalar> from_record(const TensorRecord& rec) {
  if (rec.precision != precision_of<Scalar>())
    throw CheckpointError("checkpoint: tensor '" + rec.name + "' is " + to_string(rec.precision));
  if (rec.shape.size() != 2) throw CheckpointError("checkpoint: tensor '" + rec.name + "' is not a matrix");
  Matrix<Scalar> m(rec.shape[0], rec.shape[1]);
  if (static_cast<std::size_t>(m.size()) * sizeof(Scalar) != rec.payload.size())
    throw CheckpointError("checkpoint: tensor '" + rec.name + "' payload size mismatch");
  decode(rec.payload, m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

template TensorRecord to_record<float>(std::string, const Matrix<float>&);
template TensorRecord to_record<double>(std::string, const Matrix<double>&);
template Matrix<float> from_record<float>(const TensorRecord&);
template Matrix<double> from_record<double>(const TensorRecord&);

}  // namespace tcoder
