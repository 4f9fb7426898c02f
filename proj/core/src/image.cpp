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

#include "qe/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <string>

#include "qe/error.hpp"

namespace qe {
namespace {

void check_geometry(int height, int width, int channels) {
  if (height < 1 || width < 1) {
    throw ShapeError("image dimensions must be positive, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  if (channels != 1 && channels != 3) {
    throw ShapeError("image channels must be 1 or 3, got " +
                     std::to_string(channels));
  }
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  check_geometry(height, width, channels);
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
}

ImageTensor ImageTensor::from_pixels(int height, int width, int channels,
                                     std::vector<float> pixels) {
  check_geometry(height, width, channels);
  const auto expected = static_cast<std::size_t>(height) * width * channels;
  if (pixels.size() != expected) {
    throw ShapeError("pixel buffer holds " + std::to_string(pixels.size()) +
                     " samples, expected " + std::to_string(expected));
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error("pixel value outside [0,1]: " + std::to_string(v));
    }
  }
  ImageTensor img;
  img.height_ = height;
  img.width_ = width;
  img.channels_ = channels;
  img.pixels_ = std::move(pixels);
  return img;
}

ImageTensor ImageTensor::from_8bit(int height, int width, int channels,
                                   std::span<const std::uint8_t> samples) {
  std::vector<float> px(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    px[i] = static_cast<float>(samples[i]) / 255.0f;
  }
  return from_pixels(height, width, channels, std::move(px));
}

ImageTensor ImageTensor::crop(int y, int x, int height, int width) const {
  if (y < 0 || x < 0 || height < 1 || width < 1 || y + height > height_ ||
      x + width > width_) {
    throw ShapeError("crop window out of bounds");
  }
  std::vector<float> px(static_cast<std::size_t>(height) * width * channels_);
  const std::size_t row = static_cast<std::size_t>(width) * channels_;
  for (int r = 0; r < height; ++r) {
    const float* src =
        pixels_.data() + (static_cast<std::size_t>(y + r) * width_ + x) * channels_;
    std::memcpy(px.data() + r * row, src, row * sizeof(float));
  }
  ImageTensor out;
  out.height_ = height;
  out.width_ = width;
  out.channels_ = channels_;
  out.pixels_ = std::move(px);
  return out;
}

ImageTensor ImageTensor::flipped_horizontal() const {
  ImageTensor out = *this;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int c = 0; c < channels_; ++c) {
        out.pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c] =
            at(y, width_ - 1 - x, c);
      }
    }
  }
  return out;
}

ImageTensor ImageTensor::to_rgb() const {
  if (channels_ == 3) return *this;
  ImageTensor out(height_, width_, 3);
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    for (int c = 0; c < 3; ++c) out.pixels_[i * 3 + c] = pixels_[i];
  }
  return out;
}

std::vector<std::uint8_t> ImageTensor::to_8bit() const {
  std::vector<std::uint8_t> out(pixels_.size());
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(pixels_[i] * 255.0f));
  }
  return out;
}

ImageTensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return ImageTensor::from_8bit(static_cast<int>(image.height),
                                static_cast<int>(image.width), color ? 3 : 1,
                                buffer);
}

void write_png(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error("cannot write an empty image to " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto samples = img.to_8bit();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, samples.data(), 0,
                               nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace qe
