#include "dropwiper/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "dropwiper/error.hpp"

namespace dropwiper {
namespace fs = std::filesystem;

namespace {

struct Raw8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PnmCursor {
 public:
  PnmCursor(const std::vector<std::uint8_t>& buf, const fs::path& path) : buf_(buf), path_(path) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= buf_.size() || !std::isdigit(buf_[pos_])) corrupt("expected integer");
    long v = 0;
    while (pos_ < buf_.size() && std::isdigit(buf_[pos_])) {
      v = v * 10 + (buf_[pos_++] - '0');
      if (v > (1L << 24)) corrupt("header value too large");
    }
    return static_cast<int>(v);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= buf_.size() || !std::isspace(buf_[pos_])) corrupt("missing raster separator");
    return pos_ + 1;
  }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw Error(ErrorCode::kCorruptHeader, path_.string() + ": " + why);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < buf_.size()) {
      if (std::isspace(buf_[pos_])) {
        ++pos_;
      } else if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& buf_;
  const fs::path& path_;
  std::size_t pos_ = 2;
};

Raw8 decode_pnm(const std::vector<std::uint8_t>& buf, const fs::path& path, bool header_only) {
  Raw8 raw;
  raw.channels = buf[1] == '6' ? 3 : 1;
  PnmCursor cur(buf, path);
  raw.width = cur.next_int();
  raw.height = cur.next_int();
  const int maxval = cur.next_int();
  if (raw.width <= 0 || raw.height <= 0) cur.corrupt("non-positive dimensions");
  if (maxval <= 0 || maxval > 65535) cur.corrupt("invalid maxval");
  if (maxval != 255) {
    throw Error(ErrorCode::kUnsupportedBitDepth,
                path.string() + ": maxval " + std::to_string(maxval) + " (only 255 supported)");
  }
  const std::size_t start = cur.raster_start();
  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  if (buf.size() < start + n) cur.corrupt("truncated raster");
  if (header_only) return raw;
  raw.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(start),
                   buf.begin() + static_cast<std::ptrdiff_t>(start + n));
  return raw;
}

Raw8 decode_png(const std::vector<std::uint8_t>& buf, const fs::path& path, bool header_only) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, buf.data(), buf.size())) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kCorruptHeader, path.string() + ": " + msg);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw Error(ErrorCode::kUnsupportedBitDepth, path.string() + ": 16-bit PNG");
  }
  if (png.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&png);
    throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": alpha channel not supported");
  }
  Raw8 raw;
  raw.width = static_cast<int>(png.width);
  raw.height = static_cast<int>(png.height);
  raw.channels = (png.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  if (header_only) {
    png_image_free(&png);
    return raw;
  }
  png.format = raw.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  raw.bytes.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kCorruptHeader, path.string() + ": " + msg);
  }
  return raw;
}

Raw8 decode(const fs::path& path, bool header_only = false) {
  if (!fs::exists(path)) throw Error(ErrorCode::kFileNotFound, "no such file: " + path.string());
  const auto buf = read_file(path);
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() >= 8 && std::memcmp(buf.data(), kPngMagic, 8) == 0) return decode_png(buf, path, header_only);
  if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '6')) return decode_pnm(buf, path, header_only);
  throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": not a PNG or binary PNM file");
}

bool is_png_path(const fs::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png";
}

void encode(const Raw8& raw, const fs::path& path) {
  if (is_png_path(path)) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(raw.width);
    png.height = static_cast<png_uint_32>(raw.height);
    png.format = raw.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, raw.bytes.data(), 0, nullptr)) {
      const std::string msg = png.message;
      png_image_free(&png);
      throw Error(ErrorCode::kUnwritablePath, path.string() + ": " + msg);
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out << (raw.channels == 3 ? "P6" : "P5") << '\n' << raw.width << ' ' << raw.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.bytes.data()),
            static_cast<std::streamsize>(raw.bytes.size()));
  if (!out) throw Error(ErrorCode::kUnwritablePath, "short write to " + path.string());
}

}  // namespace

Image load_image(const fs::path& path) {
  const Raw8 raw = decode(path);
  Image img(raw.height, raw.width, raw.channels);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.data[i] = raw.bytes[i] / 255.0;
  return img;
}

ImageInfo probe_image(const fs::path& path) {
  const Raw8 raw = decode(path, true);
  return {raw.height, raw.width, raw.channels};
}

Mask load_mask(const fs::path& path) {
  const Raw8 raw = decode(path);
  if (raw.channels != 1) throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": mask must be single-channel");
  Mask m(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) {
    if (raw.bytes[i] != 0 && raw.bytes[i] != 255) {
      throw Error(ErrorCode::kUnsupportedFormat, path.string() + ": mask bytes must be 0 or 255");
    }
    m.data[i] = raw.bytes[i] ? 1 : 0;
  }
  return m;
}

void save_image(const Image& img, const fs::path& path) {
  Raw8 raw{img.height, img.width, img.channels, std::vector<std::uint8_t>(img.data.size())};
  for (std::size_t i = 0; i < img.data.size(); ++i) raw.bytes[i] = static_cast<std::uint8_t>(to_level(img.data[i]));
  encode(raw, path);
}

void save_image(const GrayImage& img, const fs::path& path) { save_image(to_image(img), path); }

void save_image(const Mask& mask, const fs::path& path) {
  Raw8 raw{mask.height, mask.width, 1, std::vector<std::uint8_t>(mask.data.size())};
  for (std::size_t i = 0; i < mask.data.size(); ++i) raw.bytes[i] = mask.data[i] ? 255 : 0;
  encode(raw, path);
}

}  // namespace dropwiper
