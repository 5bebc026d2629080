// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "attnmosaic/error.hpp"

namespace attnmosaic {

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw;
  try {
    raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception&) {
    raw.release();
  }
  if (raw.empty() || raw.cols <= 0 || raw.rows <= 0) {
    throw Error(ErrorCode::kIo, "cannot decode image: " + path.string());
  }
  if (raw.depth() == CV_16U) {
    raw.convertTo(raw, CV_8U, 1.0 / 257.0);
  } else if (raw.depth() != CV_8U) {
    throw Error(ErrorCode::kIo, "unsupported pixel depth: " + path.string());
  }

  const int src_channels = raw.channels();
  if (src_channels != 1 && src_channels != 3 && src_channels != 4) {
    throw Error(ErrorCode::kIo, "unsupported channel count: " + path.string());
  }
  const int channels = src_channels == 1 ? 1 : 3;
  Image out(raw.cols, raw.rows, channels);
  for (int y = 0; y < raw.rows; ++y) {
    const std::uint8_t* row = raw.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) {
      const std::uint8_t* px = row + static_cast<std::ptrdiff_t>(x) * src_channels;
      if (channels == 1) {
        out.at(x, y, 0) = px[0];
      } else {
        // imgcodecs hands back BGR(A)
        out.at(x, y, 0) = px[2];
        out.at(x, y, 1) = px[1];
        out.at(x, y, 2) = px[0];
      }
    }
  }
  return out;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(image.height, image.width, type);
  for (int y = 0; y < image.height; ++y) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      std::uint8_t* px = row + static_cast<std::ptrdiff_t>(x) * image.channels;
      if (image.channels == 1) {
        px[0] = image.at(x, y, 0);
      } else {
        px[0] = image.at(x, y, 2);
        px[1] = image.at(x, y, 1);
        px[2] = image.at(x, y, 0);
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw Error(ErrorCode::kIo, "cannot write image: " + path.string());
}

namespace {

// Overlap weights of each output cell with the source pixels along one axis.
struct Span {
  int first = 0;
  std::vector<double> weights;
};

std::vector<Span> axis_weights(int src, int dst) {
  std::vector<Span> spans(static_cast<std::size_t>(dst));
  const double step = static_cast<double>(src) / dst;
  for (int o = 0; o < dst; ++o) {
    const double lo = o * step;
    const double hi = (o + 1) * step;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
    Span& span = spans[static_cast<std::size_t>(o)];
    span.first = first;
    for (int i = first; i <= last; ++i) {
      const double w = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      span.weights.push_back(std::max(0.0, w));
    }
  }
  return spans;
}

}  // namespace

Image area_downsample(const Image& src, int size) {
  const auto xs = axis_weights(src.width, size);
  const auto ys = axis_weights(src.height, size);
  Image out(size, size, src.channels);
  std::vector<double> acc(static_cast<std::size_t>(src.channels));
  for (int oy = 0; oy < size; ++oy) {
    const Span& sy = ys[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < size; ++ox) {
      const Span& sx = xs[static_cast<std::size_t>(ox)];
      std::fill(acc.begin(), acc.end(), 0.0);
      double total = 0.0;
      for (std::size_t j = 0; j < sy.weights.size(); ++j) {
        const int y = sy.first + static_cast<int>(j);
        for (std::size_t i = 0; i < sx.weights.size(); ++i) {
          const int x = sx.first + static_cast<int>(i);
          const double w = sy.weights[j] * sx.weights[i];
          total += w;
          for (int c = 0; c < src.channels; ++c) acc[static_cast<std::size_t>(c)] += w * src.at(x, y, c);
        }
      }
      for (int c = 0; c < src.channels; ++c) {
        const double v = std::nearbyint(acc[static_cast<std::size_t>(c)] / total);
        out.at(ox, oy, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

Image to_rgb(const Image& src) {
  if (src.channels == 3) return src;
  Image out(src.width, src.height, 3);
  for (std::size_t i = 0; i < src.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = src.pixels[i];
  }
  return out;
}

Image crop(const Image& src, int x0, int y0, int w, int h) {
  Image out(w, h, src.channels);
  const auto row_bytes = static_cast<std::size_t>(w) * src.channels;
  for (int y = 0; y < h; ++y) {
    const auto* from = &src.pixels[(static_cast<std::size_t>(y0 + y) * src.width + x0) * src.channels];
    std::copy(from, from + row_bytes, &out.pixels[static_cast<std::size_t>(y) * row_bytes]);
  }
  return out;
}

void paste(Image& dst, const Image& patch, int x0, int y0) {
  const auto row_bytes = static_cast<std::size_t>(patch.width) * patch.channels;
  for (int y = 0; y < patch.height; ++y) {
    const auto* from = &patch.pixels[static_cast<std::size_t>(y) * row_bytes];
    std::copy(from, from + row_bytes,
              &dst.pixels[(static_cast<std::size_t>(y0 + y) * dst.width + x0) * dst.channels]);
  }
}

}  // namespace attnmosaic
