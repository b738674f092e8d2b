#include "udscreen/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "udscreen/json_io.hpp"

namespace udscreen {

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.empty()) throw Error("cannot encode an empty image");
  cv::Mat rgb(image.height, image.width, CV_8UC3,
              const_cast<std::uint8_t*>(image.data.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw Error("PNG encoding failed");
  return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw Error("PNG data is empty");
  cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("could not decode image data");
  RgbImage out(bgr.cols, bgr.rows);
  cv::Mat rgb(out.height, out.width, CV_8UC3, out.data.data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

RgbImage read_png(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  try {
    return decode_png(std::vector<std::uint8_t>(raw.begin(), raw.end()));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace udscreen
