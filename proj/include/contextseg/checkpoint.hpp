#pragma once

#include <filesystem>

#include "contextseg/graph.hpp"

namespace contextseg {

// Binary layout, all integers little-endian u32:
//   magic "CTXSEGCK", version, net-spec text length, net-spec text (the
//   net.* config lines), parameter count, then per parameter: name length,
//   name, 4 extents (n, c, h, w), raw little-endian float32 values.
inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'X', 'S', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net);
// IoError on an unreadable or malformed file; ShapeError when a record does
// not match the architecture described in the header.
Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace contextseg
