#pragma once

// Checkpoint container:
//
//   bytes 0..5   magic "TCKPT1"
//   bytes 6..13  manifest length L, unsigned 64-bit little-endian
//   next L bytes manifest, UTF-8 JSON:
//                {"version":1,"meta":{...},
//                 "tensors":[{"name","shape","precision","offset","nbytes"},...]}
//   remainder    tensor payloads, row-major, little-endian; offsets are
//                relative to the first payload byte
//
// Writing the same content twice produces identical bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcoder/numerics.hpp"

namespace tcoder {

inline constexpr char kCheckpointMagic[] = "TCKPT1";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  std::vector<Index> shape;
  Precision precision = Precision::f64;
  std::vector<std::uint8_t> payload;  // little-endian
};

struct CheckpointFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointFile& file);
CheckpointFile parse_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename Scalar>
TensorRecord to_record(std::string name, const Matrix<Scalar>& m);

/// Reads a record of the same precision back into a matrix.
template <typename Scalar>
Matrix<Scalar> from_record(const TensorRecord& rec);

}  // namespace tcoder
