#include "qhconv/image_io.hpp"

#include <png.h>

#include <fstream>
#include <stdexcept>
#include <string>

namespace qhconv {

namespace {

std::string extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(c));
  return ext;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("unsupported PNM file " + path.string());
  Image img(w, h, magic == "P5" ? 1 : 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("truncated PNM file " + path.string());
  return img;
}

}  // namespace

void write_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_image: 1 or 3 channels expected");
  const auto ext = extension(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    write_pnm(img, path);
    return;
  }
  if (ext != ".png")
    throw std::runtime_error("unknown image extension '" + ext + "'");

  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&desc, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr))
    throw std::runtime_error("PNG write failed for " + path.string() + ": " +
                             desc.message);
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = extension(path);
  if (ext != ".png") return read_pnm(path);
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.c_str()))
    throw std::runtime_error("PNG read failed for " + path.string() + ": " +
                             desc.message);
  const bool gray = (desc.format & PNG_FORMAT_FLAG_COLOR) == 0;
  desc.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(static_cast<int>(desc.width), static_cast<int>(desc.height),
            gray ? 1 : 3);
  if (!png_image_finish_read(&desc, nullptr, img.pixels.data(), 0, nullptr))
    throw std::runtime_error("PNG decode failed for " + path.string() + ": " +
                             desc.message);
  return img;
}

}  // namespace qhconv
