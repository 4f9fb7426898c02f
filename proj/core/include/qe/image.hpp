// Copyright 2026 The DebiasQE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace qe {

/// Interleaved H x W x C image with every sample in [0, 1].
///
/// Immutable after construction: all transforms return new images. 8-bit
/// integers only appear at the PNG/codec boundary.
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Zero-filled image. Throws ShapeError for non-positive sizes or a
  /// channel count other than 1 or 3.
  ImageTensor(int height, int width, int channels);

  /// Takes ownership of `pixels` (row-major, channel-interleaved). Throws
  /// ShapeError on a size mismatch and Error on values outside [0, 1] or
  /// non-finite values.
  static ImageTensor from_pixels(int height, int width, int channels,
                                 std::vector<float> pixels);

  /// Builds an image from 8-bit samples, mapping k to k / 255.
  static ImageTensor from_8bit(int height, int width, int channels,
                               std::span<const std::uint8_t> samples);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int bit_depth_origin() const { return 8; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  float at(int y, int x, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::span<const float> pixels() const { return pixels_; }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  ImageTensor crop(int y, int x, int height, int width) const;
  ImageTensor flipped_horizontal() const;
  /// Grayscale images are replicated to three channels; RGB is returned as is.
  ImageTensor to_rgb() const;

  /// Rounds to the nearest 8-bit level.
  std::vector<std::uint8_t> to_8bit() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

ImageTensor read_png(const std::filesystem::path& path);
void write_png(const ImageTensor& image, const std::filesystem::path& path);

}  // namespace qe
