#include "attsteer/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#ifdef ATTSTEER_HAVE_PNG
#include <png.h>
#endif

namespace attsteer {

namespace {

std::size_t read_header_number(std::istream& is) {
  int ch = is.get();
  while (is && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (is && ch != '\n') ch = is.get();
    }
    ch = is.get();
  }
  if (!is || !std::isdigit(ch)) throw ImageIoError("malformed PNM header");
  std::size_t v = 0;
  while (is && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = is.get();
  }
  return v;  // the single whitespace after maxval has been consumed
}

}  // namespace

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ImageIoError("PNM output needs 1 or 3 channels");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageIoError("cannot open " + path.string() + " for writing");
  os << (image.channels == 3 ? "P6" : "P5") << '\n'
     << image.width << ' ' << image.height << '\n'
     << 255 << '\n';
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw ImageIoError("failed writing " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageIoError("cannot open image " + path.string());
  char p = 0, kind = 0;
  is.get(p).get(kind);
  if (p != 'P' || (kind != '6' && kind != '5')) {
    throw ImageIoError(path.string() + ": only binary P5/P6 images are supported");
  }
  const std::size_t w = read_header_number(is);
  const std::size_t h = read_header_number(is);
  const std::size_t maxval = read_header_number(is);
  if (w == 0 || h == 0 || maxval != 255) {
    throw ImageIoError(path.string() + ": unsupported dimensions or depth");
  }
  Image img(h, w, kind == '6' ? 3 : 1);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw ImageIoError(path.string() + ": truncated pixel data");
  }
  return img;
}

#ifdef ATTSTEER_HAVE_PNG
bool png_supported() noexcept { return true; }

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw ImageIoError(path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(img.height, img.width, 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageIoError(path.string() + ": " + img.message);
  }
  return out;
}
#else
bool png_supported() noexcept { return false; }

Image read_png(const std::filesystem::path& path) {
  throw ImageIoError(path.string() + ": built without PNG support");
}
#endif

Image read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  return read_pnm(path);
}

}  // namespace attsteer
