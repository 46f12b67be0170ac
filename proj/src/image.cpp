#include "ddf2pol/image.hpp"

#include <png.h>

#include <array>
#include <cstring>
#include <fstream>

#include "ddf2pol/errors.hpp"

namespace ddf2pol {

namespace {

void write_with_format(std::size_t width, std::size_t height, std::uint32_t format,
                       const std::uint8_t* data, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::vector<std::uint8_t> read_with_format(const std::filesystem::path& path, std::uint32_t format,
                                           std::size_t& width, std::size_t& height) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  width = image.width;
  height = image.height;
  return buffer;
}

}  // namespace

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  write_with_format(image.width, image.height, PNG_FORMAT_RGB, image.rgb.data(), path);
}

void write_png(const GrayImage& image, const std::filesystem::path& path) {
  write_with_format(image.width, image.height, PNG_FORMAT_GRAY, image.values.data(), path);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage out;
  out.rgb = read_with_format(path, PNG_FORMAT_RGB, out.width, out.height);
  return out;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  GrayImage out;
  out.values = read_with_format(path, PNG_FORMAT_GRAY, out.width, out.height);
  return out;
}

bool looks_like_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::array<unsigned char, 8> sig{};
  is.read(reinterpret_cast<char*>(sig.data()), sig.size());
  return is && png_sig_cmp(sig.data(), 0, sig.size()) == 0;
}

}  // namespace ddf2pol
