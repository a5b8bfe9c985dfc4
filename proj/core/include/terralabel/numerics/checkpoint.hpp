#pragma once

#include <filesystem>
#include <iosfwd>

#include "terralabel/numerics/parameters.hpp"

// "TLWT" weight files: magic, u16 version, then (u16 name length, UTF-8 name,
// u8 rank, u32 dims..., float32 payload) records until end of file.
namespace terralabel::numerics {

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParameterList<float>& tensors);
ParameterList<float> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParameterList<float>& tensors);
ParameterList<float> load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into same-named tensors of `target`.
/// Throws if a name is missing or a shape differs.
void assign_parameters(ParameterList<float>& target, const ParameterList<float>& source);

}  // namespace terralabel::numerics
