// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spectrafuse/tensor.hpp"

namespace spectrafuse {

/// Interleaved (row, column, channel) image with values in [0, 1].
struct ImagePlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  static ImagePlane filled(std::size_t height, std::size_t width, std::size_t channels, double value);

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  /// Throws DimensionError on a length mismatch, ContractError on values
  /// outside [0, 1] or channel counts other than 1 and 3.
  void validate() const;

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

/// Binary PGM (P5, one channel) or PPM (P6, three channels); samples are
/// divided by maxval.
ImagePlane read_pnm(const std::string& path);
ImagePlane decode_pnm(const std::vector<std::uint8_t>& bytes);
/// Writes P5 or P6 with maxval 255.
void write_pnm(const std::string& path, const ImagePlane& img);

/// [H × W × C] tensor view of an image and back.
Tensor image_to_tensor(const ImagePlane& img);
ImagePlane tensor_to_image(const Tensor& t);

/// Reads PGM, PPM, or a raw TNSR image, dispatching on the magic bytes.
ImagePlane read_image(const std::string& path);

}  // namespace spectrafuse
