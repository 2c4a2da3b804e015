#pragma once

#include <filesystem>
#include <vector>

namespace entcap {

/// Decoded RGB raster, interleaved, channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  float at(int x, int y, int channel) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
  }
};

/// Single-channel input is replicated to three channels.
Image make_image(int width, int height, int channels, std::vector<float> values);

/// Decodes binary/ASCII netpbm (P2, P3, P5, P6) and PNG. Throws IoError when the file
/// cannot be read or decoded.
Image load_image(const std::filesystem::path& path);

/// Writes binary PPM (P6); used by tools and tests to produce fixtures.
void save_ppm(const Image& image, const std::filesystem::path& path);

bool is_supported_image(const std::filesystem::path& path);

}  // namespace entcap
