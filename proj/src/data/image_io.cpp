#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <memory>

#include <png.h>

#include "anovit/image.hpp"

namespace anovit {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e;
}

struct Decoded {
  std::uint32_t width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<unsigned char> bytes;  // row-major; 16-bit samples native-endian
  std::vector<png_bytep> rows;
};

// Plain C frame: libpng longjmps here on error.
bool decode_png(std::FILE* fp, Decoded& out, char* err, std::size_t err_len) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(err, err_len, "corrupt PNG data");
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.assign(stride * out.height, 0);
  out.rows.resize(out.height);
  for (std::uint32_t y = 0; y < out.height; ++y) out.rows[y] = out.bytes.data() + y * stride;
  png_read_image(png, out.rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

Image read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path.string() + ": not a PNG file");
  std::rewind(fp.get());
  Decoded d;
  char err[128] = "cannot allocate PNG decoder";
  if (!decode_png(fp.get(), d, err, sizeof err)) throw FormatError(path.string() + ": " + err);
  if (d.channels != 1 && d.channels != 3) throw FormatError(path.string() + ": unsupported channel layout");
  const std::size_t c = static_cast<std::size_t>(d.channels);
  Image img({d.height, d.width, c});
  if (d.bit_depth == 16) {
    const auto* s = reinterpret_cast<const std::uint16_t*>(d.bytes.data());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(s[i] / 65535.0);
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(d.bytes[i] / 255.0);
  }
  return img;
}

// Plain C frame for the writer.
bool encode_png(std::FILE* fp, std::uint32_t w, std::uint32_t h, int color, int depth,
                const std::vector<unsigned char>& bytes, std::size_t stride) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  for (std::uint32_t y = 0; y < h; ++y) png_write_row(png, bytes.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

// Skips whitespace and comments, then reads one unsigned decimal.
std::size_t pnm_number(std::istream& in, const fs::path& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw FormatError(path.string() + ": malformed PNM header");
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = in.get();
  }
  return v;  // the single whitespace after the number has been consumed
}

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError(path.string() + ": only binary PGM (P5) and PPM (P6) are supported");
  const std::size_t c = magic[1] == '5' ? 1 : 3;
  const std::size_t w = pnm_number(in, path);
  const std::size_t h = pnm_number(in, path);
  const std::size_t maxval = pnm_number(in, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError(path.string() + ": invalid PNM header");
  const std::size_t bps = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> bytes(w * h * c * bps);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw FormatError(path.string() + ": truncated PNM data");
  Image img({h, w, c});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::size_t v = bps == 2 ? (std::size_t{bytes[2 * i]} << 8) | bytes[2 * i + 1] : bytes[i];
    img[i] = static_cast<float>(std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval)));
  }
  return img;
}

std::size_t quantize(float v, double levels) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::size_t>(std::lround(clamped * levels));
}

void check_writable(const Image& image, const char* what) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3))
    throw DimensionError(std::string(what) + " needs [H, W, 1] or [H, W, 3], got " + shape_str(image.shape()));
}

}  // namespace

Image read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
  return read_png(path);
}

void write_png(const fs::path& path, const Image& image, int bit_depth) {
  check_writable(image, "write_png");
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t bps = bit_depth / 8;
  const std::size_t stride = w * c * bps;
  std::vector<unsigned char> bytes(stride * h);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (bps == 1) {
      bytes[i] = static_cast<unsigned char>(quantize(image[i], 255.0));
    } else {
      const auto v = static_cast<std::uint16_t>(quantize(image[i], 65535.0));
      std::memcpy(bytes.data() + 2 * i, &v, 2);
    }
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  const int color = c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  if (!encode_png(fp.get(), static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h), color, bit_depth, bytes,
                  stride))
    throw IoError("PNG encoding failed: " + path.string());
  if (std::fflush(fp.get()) != 0) throw IoError("write failed: " + path.string());
}

void write_pnm(const fs::path& path, const Image& image) {
  check_writable(image, "write_pnm");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (image.dim(2) == 1 ? "P5" : "P6") << "\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = static_cast<unsigned char>(quantize(image[i], 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace anovit
