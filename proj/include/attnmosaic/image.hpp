// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace attnmosaic {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels, row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Decodes PNG/JPEG (anything imgcodecs reads) into 1 or 3 channels.
/// Alpha is dropped and 16-bit inputs are scaled to 8 bits.
/// Throws Error(kIo) if the file cannot be decoded.
Image load_image(const std::filesystem::path& path);

/// Writes PNG or JPEG, chosen by the file extension. Throws Error(kIo) on
/// failure.
void save_image(const Image& image, const std::filesystem::path& path);

/// Box-filter resample to size x size: every output pixel is the exact area
/// average of the (fractional) source rectangle it covers, rounded to nearest.
Image area_downsample(const Image& src, int size);

/// Replicates a gray channel into RGB; RGB images are returned unchanged.
Image to_rgb(const Image& src);

/// Copy of the w x h window at (x0, y0).
Image crop(const Image& src, int x0, int y0, int w, int h);

/// Pastes `patch` (same channel count) with its top-left at (x0, y0).
void paste(Image& dst, const Image& patch, int x0, int y0);

}  // namespace attnmosaic
