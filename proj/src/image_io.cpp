#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "panosim/image.hpp"

namespace panosim {

namespace {

cv::Mat decode_mat(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) throw ImageError("empty image buffer");
  const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1,
                       const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat = cv::imdecode(buffer, flags);
  if (mat.empty()) throw ImageError("cannot decode image");
  if (mat.depth() != CV_8U) throw ImageError("only 8-bit images are supported");
  return mat;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

RgbImage decode_rgb(std::span<const std::uint8_t> bytes) {
  const cv::Mat bgr = decode_mat(bytes, cv::IMREAD_COLOR);
  RgbImage out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* src = bgr.ptr<std::uint8_t>(y);
    auto* dst = out.pixels.data() + out.offset(0, y);
    for (int x = 0; x < bgr.cols; ++x) {
      dst[3 * x + 0] = src[3 * x + 2];
      dst[3 * x + 1] = src[3 * x + 1];
      dst[3 * x + 2] = src[3 * x + 0];
    }
  }
  return out;
}

RgbImage read_rgb(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_rgb(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

RgbaImage decode_rgba(std::span<const std::uint8_t> bytes) {
  const cv::Mat mat = decode_mat(bytes, cv::IMREAD_UNCHANGED);
  RgbaImage out(mat.cols, mat.rows);
  const int ch = mat.channels();
  for (int y = 0; y < mat.rows; ++y) {
    const auto* src = mat.ptr<std::uint8_t>(y);
    auto* dst = out.pixels.data() + out.offset(0, y);
    for (int x = 0; x < mat.cols; ++x) {
      if (ch == 1) {
        dst[4 * x + 0] = dst[4 * x + 1] = dst[4 * x + 2] = src[x];
        dst[4 * x + 3] = 255;
      } else {
        dst[4 * x + 0] = src[ch * x + 2];
        dst[4 * x + 1] = src[ch * x + 1];
        dst[4 * x + 2] = src[ch * x + 0];
        dst[4 * x + 3] = ch == 4 ? src[ch * x + 3] : 255;
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encode(const RgbImage& image, ImageEncoding encoding, int jpeg_quality) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    const auto* src = image.pixels.data() + image.offset(0, y);
    auto* dst = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      dst[3 * x + 0] = src[3 * x + 2];
      dst[3 * x + 1] = src[3 * x + 1];
      dst[3 * x + 2] = src[3 * x + 0];
    }
  }
  std::vector<std::uint8_t> out;
  const bool ok = encoding == ImageEncoding::kPng
                      ? cv::imencode(".png", bgr, out, {cv::IMWRITE_PNG_COMPRESSION, 1})
                      : cv::imencode(".jpg", bgr, out, {cv::IMWRITE_JPEG_QUALITY, jpeg_quality});
  if (!ok) throw ImageError("image encoding failed");
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbaImage& image) {
  cv::Mat bgra(image.height, image.width, CV_8UC4);
  for (int y = 0; y < image.height; ++y) {
    const auto* src = image.pixels.data() + image.offset(0, y);
    auto* dst = bgra.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      dst[4 * x + 0] = src[4 * x + 2];
      dst[4 * x + 1] = src[4 * x + 1];
      dst[4 * x + 2] = src[4 * x + 0];
      dst[4 * x + 3] = src[4 * x + 3];
    }
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgra, out)) throw ImageError("image encoding failed");
  return out;
}

void write_image(const std::filesystem::path& path, const RgbImage& image) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto enc = (ext == ".jpg" || ext == ".jpeg") ? ImageEncoding::kJpeg : ImageEncoding::kPng;
  const auto bytes = encode(image, enc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("short write to " + path.string());
}

}  // namespace panosim
