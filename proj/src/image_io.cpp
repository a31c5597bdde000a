#include "snne/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "snne/errors.hpp"

namespace snne {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw IngestError("cannot open file: " + path);
  }
  return f;
}

ImageU8 read_png_file(std::FILE* f, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestError("png decoder init failed: " + path);
  }
  ImageU8 img;
  std::vector<png_bytep> rows;
  // Buffers live before setjmp so cleanup is well defined on decode errors.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestError("png decode failed: " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestError("png decode yielded unexpected row size: " + path);
  }
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * width * 3;
  }
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_trap(j_common_ptr cinfo) {
  std::longjmp(reinterpret_cast<JpegErrorTrap*>(cinfo->err)->jump, 1);
}

ImageU8 read_jpeg_file(std::FILE* f, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_trap;
  ImageU8 img;
  if (setjmp(trap.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IngestError("jpeg decode failed: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) *
                       img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8] = {0};
  const std::size_t got = std::fread(sig, 1, sizeof(sig), f.get());
  std::rewind(f.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
    return read_png_file(f.get(), path);
  }
  if (got >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) {
    return read_jpeg_file(f.get(), path);
  }
  throw IngestError("unsupported image format (want PNG or JPEG): " + path);
}

void write_png(const std::string& path, const ImageU8& image) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() !=
          static_cast<std::size_t>(image.width) * image.height * 3) {
    throw IngestError("write_png: malformed image buffer for " + path);
  }
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IngestError("png encoder init failed: " + path);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestError("png encode failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(image.pixels.data()) +
        static_cast<std::size_t>(y) * image.width * 3;
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor4f image_to_tensor(const ImageU8& image) {
  Tensor4f t(1, 3, image.height, image.width);
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t i = 0; i < plane; ++i) {
    t.data[i] = image.pixels[3 * i] / 255.0f;
    t.data[plane + i] = image.pixels[3 * i + 1] / 255.0f;
    t.data[2 * plane + i] = image.pixels[3 * i + 2] / 255.0f;
  }
  return t;
}

ImageU8 tensor_to_image(const Tensor4f& tensor) {
  if (tensor.batch != 1 || tensor.channels != 3) {
    throw ShapeError("tensor_to_image: expected (1,3,H,W), got " +
                     tensor.shape_string());
  }
  ImageU8 img;
  img.width = tensor.width;
  img.height = tensor.height;
  const std::size_t plane =
      static_cast<std::size_t>(img.height) * img.width;
  img.pixels.resize(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = tensor.data[static_cast<std::size_t>(c) * plane + i];
      v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      img.pixels[3 * i + static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(v * 255.0f + 0.5f);
    }
  }
  return img;
}

}  // namespace snne
