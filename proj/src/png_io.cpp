#include "ablreg/png_io.hpp"

#include <csetjmp>
#include <fstream>
#include <memory>

#include <png.h>

namespace ablreg {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void no_flush(png_structp) {}

}  // namespace

std::string encode_png(const std::vector<std::uint8_t>& pixels, int width, int height, int channels) {
  if (channels != 1 && channels != 4) throw Error("png: channels must be 1 or 4");
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height * channels) {
    throw Error("png: pixel buffer does not match dimensions");
  }
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, no_flush);
  png_set_IHDR(png, info, width, height, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGBA,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::string& path, const std::vector<std::uint8_t>& pixels, int width, int height,
               int channels) {
  const std::string bytes = encode_png(pixels, width, height, channels);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image2D read_png_gray(const std::string& path, double spacing_x, double spacing_y) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error("cannot read png '" + path + "': " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error("cannot decode png '" + path + "': " + image.message);
  }
  Image2D out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.spacing_x = spacing_x;
  out.spacing_y = spacing_y;
  out.pixels.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0;
  return out;
}

}  // namespace ablreg
