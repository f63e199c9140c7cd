#include "mist/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "mist/errors.hpp"

namespace mist {

namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  std::uint32_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      fail("malformed header");
    }
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 0xffffffffu) {
        fail("header value out of range");
      }
    }
    return static_cast<std::uint32_t>(v);
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      fail("missing whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') {
      fail("not a binary PGM (expected P5 magic)");
    }
    pos_ = 2;
  }

  [[noreturn]] void fail(const std::string& what) const { throw IoError(path_.string() + ": " + what); }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
          ++pos_;
        }
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(path.string() + ": cannot open");
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderParser parser(bytes, path);
  parser.expect_magic();
  PgmImage img;
  img.width = parser.number();
  img.height = parser.number();
  img.maxval = parser.number();
  parser.single_whitespace();
  if (img.width == 0 || img.height == 0) {
    parser.fail("zero image dimension");
  }
  if (img.maxval == 0 || img.maxval > 65535) {
    parser.fail("maxval must be in [1, 65535]");
  }
  const std::size_t bytes_per_sample = img.maxval < 256 ? 1 : 2;
  const std::size_t count = img.width * img.height;
  if (bytes.size() - parser.pos() < count * bytes_per_sample) {
    parser.fail("pixel data truncated");
  }
  img.samples.resize(count);
  const unsigned char* data = bytes.data() + parser.pos();
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = bytes_per_sample == 1 ? data[i] : (static_cast<std::uint32_t>(data[2 * i]) << 8) | data[2 * i + 1];
    if (v > img.maxval) {
      parser.fail("sample exceeds maxval");
    }
    img.samples[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const PgmImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(path.string() + ": cannot open for writing");
  }
  out << "P5\n" << image.width << " " << image.height << "\n" << image.maxval << "\n";
  std::vector<unsigned char> data;
  data.reserve(image.samples.size() * 2);
  for (auto v : image.samples) {
    if (image.maxval < 256) {
      data.push_back(static_cast<unsigned char>(v));
    } else {
      data.push_back(static_cast<unsigned char>(v >> 8));
      data.push_back(static_cast<unsigned char>(v & 0xff));
    }
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw IoError(path.string() + ": write failed");
  }
}

PgmImage to_pgm(const std::vector<float>& pixels, std::size_t width, std::size_t height, std::uint32_t maxval) {
  PgmImage img;
  img.width = width;
  img.height = height;
  img.maxval = maxval;
  img.samples.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(pixels[i]), 0.0, 1.0);
    img.samples[i] = static_cast<std::uint16_t>(std::floor(v * maxval + 0.5));
  }
  return img;
}

}  // namespace mist
