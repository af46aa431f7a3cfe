#pragma once

#include <filesystem>

#include "spine/nets.hpp"

namespace spine {

// Checkpoint = JSON manifest (net config, tensor names/shapes/offsets, per
// parameter optimizer step counts) + one raw little-endian float32 payload
// holding parameter values, Adam moments, and batch-norm running statistics.
// Round-trips are bit-exact.

void save_checkpoint(UNet3D& net, const std::filesystem::path& manifest_path);
UNet3D load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace spine
