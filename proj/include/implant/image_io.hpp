#pragma once

#include <filesystem>

#include "implant/imaging.hpp"

namespace implant {

/// Reads an 8-bit grayscale mask (binary PGM "P5" or PNG) and thresholds it
/// at 128: values >= 128 become foreground. The result may be empty.
Mask import_mask(const std::filesystem::path& path);

/// Writes a binary PGM (P5, maxval 255).
void write_pgm(const Mask& mask, const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG.
void write_png(const Mask& mask, const std::filesystem::path& path);

}  // namespace implant
