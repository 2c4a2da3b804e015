#include "entcap/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

// Netpbm header fields are whitespace separated and may carry '#' comments.
class PnmReader {
 public:
  explicit PnmReader(std::string bytes) : bytes_(std::move(bytes)) {}

  long next_int() {
    skip_space_and_comments();
    long value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_++] - '0');
      any = true;
      if (value > (1L << 24)) throw IoError("netpbm value out of range");
    }
    if (!any) throw IoError("malformed netpbm header");
    return value;
  }

  std::string take_magic() {
    if (bytes_.size() < 2) throw IoError("file too short for netpbm");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw IoError("malformed netpbm header");
    }
    ++pos_;
  }

  unsigned read_binary(bool wide) {
    const std::size_t width = wide ? 2 : 1;
    if (pos_ + width > bytes_.size()) throw IoError("netpbm raster truncated");
    unsigned value = static_cast<unsigned char>(bytes_[pos_]);
    if (wide) value = (value << 8) | static_cast<unsigned char>(bytes_[pos_ + 1]);
    pos_ += width;
    return value;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

Image load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open image '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  PnmReader reader(buffer.str());
  const std::string magic = reader.take_magic();
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P3") channels = 3;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P6") channels = 3, binary = true;
  else throw IoError(fmt::format("unsupported netpbm variant '{}' in '{}'", magic, path.string()));

  const long width = reader.next_int();
  const long height = reader.next_int();
  const long maxval = reader.next_int();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError(fmt::format("bad netpbm dimensions in '{}'", path.string()));
  }
  if (binary) reader.skip_single_space();
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned raw = binary ? reader.read_binary(maxval > 255)
                                : static_cast<unsigned>(reader.next_int());
    values[i] = static_cast<float>(std::min<double>(raw, maxval) / static_cast<double>(maxval));
  }
  return make_image(static_cast<int>(width), static_cast<int>(height), channels, std::move(values));
}

Image load_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, decltype(&std::fclose)> file(std::fopen(path.c_str(), "rb"),
                                                          &std::fclose);
  if (!file) throw IoError(fmt::format("cannot open image '{}'", path.string()));
  unsigned char signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw IoError(fmt::format("'{}' is not a PNG file", path.string()));
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raster;
  int width = 0;
  int height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(fmt::format("failed to decode PNG '{}'", path.string()));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  raster.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = raster.data() + stride * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<float> values(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width * 3; ++x) {
      values[static_cast<std::size_t>(y) * width * 3 + x] = raster[stride * y + x] / 255.0f;
    }
  }
  return make_image(width, height, 3, std::move(values));
}

}  // namespace

Image make_image(int width, int height, int channels, std::vector<float> values) {
  if (width <= 0 || height <= 0) throw ShapeError("image dimensions must be positive");
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  if (channels != 1 && channels != 3) throw ShapeError("image must have 1 or 3 channels");
  if (values.size() != pixels * channels) throw ShapeError("image buffer size mismatch");
  Image image{width, height, {}};
  if (channels == 3) {
    image.rgb = std::move(values);
  } else {
    image.rgb.resize(pixels * 3);
    for (std::size_t i = 0; i < pixels; ++i) {
      image.rgb[3 * i] = image.rgb[3 * i + 1] = image.rgb[3 * i + 2] = values[i];
    }
  }
  return image;
}

Image load_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return load_png(path);
  return load_pnm(path);
}

void save_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.rgb) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)));
  }
}

bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace entcap
