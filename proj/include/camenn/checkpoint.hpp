#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "camenn/tensor.hpp"

namespace camenn {

enum class DType { F64, F32 };

struct NamedTensor {
    std::string name;
    Tensor tensor;
    DType dtype = DType::F64;
};

/// Checkpoint file layout:
///
///     CAMENN-CHECKPOINT 1
///     tensors <count>
///     <name> <f64|f32> <rank> <dim0> ... <dimN-1>     (one line per tensor)
///     end
///     <raw little-endian values, tensors in header order>
///
/// f64 entries round-trip bit-exactly. f32 entries are widened on read.
inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Lookup helper; throws ParseError naming the missing tensor.
const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);
const NamedTensor* try_find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace camenn
