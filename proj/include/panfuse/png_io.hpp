// Copyright 2026 The Panfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// PNG interchange: panoptic maps as 24-bit RGB images with a JSON segment
// annotation (segment id = R + 256*G + 65536*B, id 0 = void), plus plain
// RGB/grayscale helpers used by the heatmap export and the corruption tool.

#ifndef PANFUSE_PNG_IO_HPP_
#define PANFUSE_PNG_IO_HPP_

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "panfuse/errors.hpp"
#include "panfuse/panoptic_map.hpp"

namespace panfuse {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png_impl(const std::filesystem::path& path, int width,
                           int height, int channels,
                           std::span<const std::uint8_t> pixels) {
  if (width <= 0 || height <= 0) throw ShapeError("image size must be positive");
  const std::size_t expect = static_cast<std::size_t>(width) *
                             static_cast<std::size_t>(height) *
                             static_cast<std::size_t>(channels);
  if (pixels.size() != expect) throw ShapeError("pixel buffer size mismatch");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw InputError("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng write error: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  const std::size_t stride =
      static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_rgb_png(const std::filesystem::path& path, int width,
                          int height, std::span<const std::uint8_t> rgb) {
  detail::write_png_impl(path, width, height, 3, rgb);
}

inline void write_gray_png(const std::filesystem::path& path, int width,
                           int height, std::span<const std::uint8_t> gray) {
  detail::write_png_impl(path, width, height, 1, gray);
}

// Decodes any 8/16-bit gray/palette/RGB(A) PNG to plain 8-bit RGB.
inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw InputError("cannot open image: " + path.string());

  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw BadMagicError("not a PNG file: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng read error: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  RgbImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(img.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unexpected decoded row size: " + path.string());
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) *
                    static_cast<std::size_t>(img.height) * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        img.pixels.data() + static_cast<std::size_t>(y) * stride;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// One row of the segment table written next to a panoptic PNG.
struct SegmentInfo {
  std::int32_t id = 0;  // pixel value in the PNG, 1..2^24-1
  std::int32_t class_id = 0;
  std::int32_t instance_id = 0;
  std::int64_t area = 0;
};

inline constexpr std::int32_t kMaxSegmentId = (1 << 24) - 1;

// Enumerates the segments of a map: one entry per distinct (class, instance)
// pair, ids 1.. in order of first appearance in row-major scan.
inline std::vector<SegmentInfo> make_segment_table(const PanopticMap& m) {
  std::vector<SegmentInfo> table;
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> lookup;
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    if (m.is_void(i)) continue;
    const std::pair<std::int32_t, std::int32_t> key{m.class_at(i), m.instance_at(i)};
    auto [it, inserted] = lookup.try_emplace(key, table.size());
    if (inserted) {
      table.push_back({static_cast<std::int32_t>(table.size()) + 1, key.first,
                       key.second, 0});
    }
    ++table[it->second].area;
  }
  return table;
}

inline void write_panoptic_png(const PanopticMap& m,
                               const std::vector<SegmentInfo>& segment_table,
                               const std::filesystem::path& png_path,
                               const std::filesystem::path& json_path,
                               const std::string& image_id = "") {
  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> id_of;
  for (const auto& s : segment_table) {
    if (s.id <= 0 || s.id > kMaxSegmentId) {
      throw ValidationError("segment id out of 24-bit range: " +
                            std::to_string(s.id));
    }
    id_of[{s.class_id, s.instance_id}] = s.id;
  }

  std::vector<std::uint8_t> rgb(m.pixel_count() * 3, 0);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    if (m.is_void(i)) continue;  // void encodes as id 0 = black
    auto it = id_of.find({m.class_at(i), m.instance_at(i)});
    if (it == id_of.end()) {
      throw ValidationError("cell without a segment table entry");
    }
    const std::uint32_t id = static_cast<std::uint32_t>(it->second);
    rgb[i * 3 + 0] = static_cast<std::uint8_t>(id & 0xff);
    rgb[i * 3 + 1] = static_cast<std::uint8_t>((id >> 8) & 0xff);
    rgb[i * 3 + 2] = static_cast<std::uint8_t>((id >> 16) & 0xff);
  }
  write_rgb_png(png_path, m.width(), m.height(), rgb);

  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : segment_table) {
    segments.push_back({{"id", s.id},
                        {"category_id", s.class_id},
                        {"instance_id", s.instance_id},
                        {"area", s.area}});
  }
  nlohmann::json j{{"image_id", image_id},
                   {"image_width", m.width()},
                   {"image_height", m.height()},
                   {"segments_info", segments}};
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw InputError("cannot write annotation: " + json_path.string());
  out << j.dump(2) << "\n";
}

inline PanopticMap read_panoptic_png(const std::filesystem::path& png_path,
                                     const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw InputError("cannot open annotation: " + json_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("annotation is not valid JSON: " + std::string(e.what()));
  }

  std::map<std::int32_t, std::pair<std::int32_t, std::int32_t>> seg;
  try {
    for (const auto& s : j.at("segments_info")) {
      seg[s.at("id").get<std::int32_t>()] = {s.at("category_id").get<std::int32_t>(),
                                             s.at("instance_id").get<std::int32_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed segments_info: " + std::string(e.what()));
  }

  const RgbImage img = read_rgb_png(png_path);
  PanopticMap m(img.width, img.height);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    const std::uint32_t id = static_cast<std::uint32_t>(img.pixels[i * 3 + 0]) |
                             (static_cast<std::uint32_t>(img.pixels[i * 3 + 1]) << 8) |
                             (static_cast<std::uint32_t>(img.pixels[i * 3 + 2]) << 16);
    if (id == 0) continue;
    auto it = seg.find(static_cast<std::int32_t>(id));
    if (it == seg.end()) {
      throw FormatError("pixel references segment id " + std::to_string(id) +
                        " missing from annotation");
    }
    m.set(i, it->second.first, it->second.second);
  }
  return m;
}

}  // namespace panfuse

#endif  // PANFUSE_PNG_IO_HPP_
