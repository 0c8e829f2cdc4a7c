// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"

namespace spectrafuse {

ImagePlane ImagePlane::filled(std::size_t height, std::size_t width, std::size_t channels,
                              double value) {
  return ImagePlane{height, width, channels,
                    std::vector<double>(height * width * channels, value)};
}

void ImagePlane::validate() const {
  if (channels != 1 && channels != 3) {
    throw ContractError("image: expected 1 or 3 channels, got " + std::to_string(channels));
  }
  if (pixels.size() != height * width * channels) {
    throw DimensionError("image: " + std::to_string(height) + "x" + std::to_string(width) + "x" +
                         std::to_string(channels) + " plane holds " +
                         std::to_string(pixels.size()) + " values");
  }
  for (double v : pixels) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ContractError("image: pixel value " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

namespace {

class PnmHeaderReader {
 public:
  explicit PnmHeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string("pnm: implausible ") + what, start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("pnm: expected ") + what, start);
    return value;
  }

  /// Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw ParseError("pnm: missing whitespace before raster", pos_);
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

ImagePlane decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("pnm: expected binary P5 or P6 magic", 0);
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  PnmHeaderReader header(bytes);
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (maxval == 0 || maxval > 255) throw ParseError("pnm: only 8-bit maxval is supported", 0);
  const std::size_t start = header.raster_start();
  const std::size_t n = width * height * channels;
  if (bytes.size() < start + n) {
    throw ParseError("pnm: raster truncated, expected " + std::to_string(n) + " samples", bytes.size());
  }
  ImagePlane img{height, width, channels, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = std::min(1.0, static_cast<double>(bytes[start + i]) / static_cast<double>(maxval));
  }
  return img;
}

ImagePlane read_pnm(const std::string& path) { return decode_pnm(read_file_bytes(path)); }

void write_pnm(const std::string& path, const ImagePlane& img) {
  img.validate();
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.pixels.size());
  for (double v : img.pixels) bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  write_file_bytes(path, bytes);
}

Tensor image_to_tensor(const ImagePlane& img) {
  return Tensor({img.height, img.width, img.channels}, img.pixels);
}

ImagePlane tensor_to_image(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("image: expected [H x W x C] tensor, got " + shape_to_string(t.shape()));
  ImagePlane img{t.shape()[0], t.shape()[1], t.shape()[2],
                 std::vector<double>(t.data().begin(), t.data().end())};
  img.validate();
  return img;
}

ImagePlane read_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "TNSR")) {
    std::size_t offset = 0;
    return tensor_to_image(decode_tensor(bytes, offset));
  }
  return decode_pnm(bytes);
}

}  // namespace spectrafuse
