#include "mcnn/image_io.hpp"

#include <png.h>
#include <stdio.h>

#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>

#include "mcnn/errors.hpp"
#include "mcnn/fs_util.hpp"

namespace mcnn {

namespace {

RgbImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* manager = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, manager->message);
  std::longjmp(manager->jump, 1);
}

RgbImage read_jpeg(const std::filesystem::path& path) {
  FILE* file = std::fopen(path.c_str(), "rb");
  if (!file) throw DataError("cannot open " + path.string());
  jpeg_decompress_struct info;
  JpegErrorManager error;
  info.err = jpeg_std_error(&error.base);
  error.base.error_exit = jpeg_error_exit;
  RgbImage out;
  if (setjmp(error.jump)) {
    jpeg_destroy_decompress(&info);
    std::fclose(file);
    throw DataError("cannot decode JPEG " + path.string() + ": " + error.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file);
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  out = RgbImage(info.output_width, info.output_height);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(info.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  std::fclose(file);
  return out;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::array<unsigned char, 8> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  const auto got = in.gcount();
  in.close();
  static constexpr std::array<unsigned char, 8> kPng{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (got == 8 && magic == kPng) return read_png(path);
  if (got >= 3 && magic[0] == 0xff && magic[1] == 0xd8 && magic[2] == 0xff) return read_jpeg(path);
  throw DataError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * 3) {
    throw InvalidArgument("write_png: malformed image");
  }
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, tmp.c_str(), 0, image.pixels.data(), 0, nullptr)) {
      throw IoError("cannot write PNG " + path.string() + ": " + png.message);
    }
  });
}

std::vector<double> resize_bilinear(const RgbImage& image, std::size_t out_w, std::size_t out_h) {
  if (image.width == 0 || image.height == 0) throw InvalidArgument("resize of an empty image");
  std::vector<double> out(out_w * out_h * 3);
  const double sx = static_cast<double>(image.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(image.height) / static_cast<double>(out_h);
  const double max_x = static_cast<double>(image.width - 1);
  const double max_y = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double p00 = image.at(x0, y0)[c], p01 = image.at(x1, y0)[c];
        const double p10 = image.at(x0, y1)[c], p11 = image.at(x1, y1)[c];
        // Lerp form keeps constant regions exactly constant.
        const double top = p00 + wx * (p01 - p00);
        const double bottom = p10 + wx * (p11 - p10);
        out[(y * out_w + x) * 3 + c] = std::clamp(top + wy * (bottom - top), 0.0, 255.0);
      }
    }
  }
  return out;
}

RgbImage to_rgb8(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw InvalidArgument("to_rgb8 expects [H,W,3], got " + shape_to_string(image.shape()));
  RgbImage out(image.dim(1), image.dim(0));
  auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

Tensor to_tensor(const RgbImage& image) {
  std::vector<double> values(image.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = image.pixels[i] / 255.0;
  return Tensor({image.height, image.width, 3}, std::move(values));
}

RgbImage upscale(const RgbImage& image, std::size_t factor) {
  if (factor == 0) throw InvalidArgument("upscale factor must be positive");
  RgbImage out(image.width * factor, image.height * factor);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) std::copy_n(image.at(x / factor, y / factor), 3, out.at(x, y));
  }
  return out;
}

RgbImage hconcat(const std::vector<RgbImage>& images) {
  std::size_t width = 0, height = 0;
  for (const RgbImage& img : images) {
    width += img.width;
    height = std::max(height, img.height);
  }
  RgbImage out(width, height);
  std::size_t offset = 0;
  for (const RgbImage& img : images) {
    for (std::size_t y = 0; y < img.height; ++y) {
      std::copy_n(img.at(0, y), img.width * 3, out.at(offset, y));
    }
    offset += img.width;
  }
  return out;
}

}  // namespace mcnn
