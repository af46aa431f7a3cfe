#pragma once

#include <filesystem>

#include "spine/volume.hpp"

namespace spine {

// Canonical volume file: a JSON header
//   {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"origin":[ox,oy,oz],
//    "dtype":"f32"|"u16","data":"<relative raw filename>"}
// plus a raw little-endian payload in x-fastest order. The raw file lives next
// to the header; writers name it <header stem>.raw.

Volume read_volume(const std::filesystem::path& header_path);
LabelVolume read_label_volume(const std::filesystem::path& header_path);

void write_volume(const Volume& v, const std::filesystem::path& header_path);
void write_label_volume(const LabelVolume& v, const std::filesystem::path& header_path);

}  // namespace spine
