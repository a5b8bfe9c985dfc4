#include "terralabel/numerics/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "terralabel/common/binary_io.hpp"

namespace terralabel::numerics {

void write_checkpoint(std::ostream& out, const ParameterList<float>& tensors) {
  io::write_magic(out, "TLWT");
  io::write_pod<std::uint16_t>(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidArgument("checkpoint: tensor name too long");
    }
    io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    io::write_span<float>(out, tensor.data());
  }
  if (!out) throw Error("checkpoint: write failed");
}

ParameterList<float> read_checkpoint(std::istream& in) {
  io::expect_magic(in, "TLWT");
  const auto version = io::read_pod<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ParameterList<float> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = io::read_pod<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = io::read_pod<std::uint8_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = io::read_pod<std::uint32_t>(in);
    std::vector<float> values(shape_size(shape));
    io::read_into<float>(in, values);
    tensors.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList<float>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_checkpoint(out, tensors);
}

ParameterList<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void assign_parameters(ParameterList<float>& target, const ParameterList<float>& source) {
  for (auto& [name, tensor] : target) {
    auto it = std::find_if(source.begin(), source.end(),
                           [&](const auto& s) { return s.name == name; });
    if (it == source.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (it->tensor.shape() != tensor.shape()) {
      throw ShapeError("checkpoint: tensor '" + name + "' has shape " +
                       shape_string(it->tensor.shape()) + ", expected " +
                       shape_string(tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), tensor.mutable_data().begin());
  }
}

}  // namespace terralabel::numerics
