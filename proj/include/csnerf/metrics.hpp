#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csnerf/core_types.hpp"

namespace csnerf {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const ImageRGB& a, const ImageRGB& b) {
  if (a.width != b.width || a.height != b.height) throw InvalidArgument("image sizes differ");
  if (a.data.empty()) throw InvalidArgument("empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / m);
}

inline std::vector<double> luma(const ImageRGB& img) {
  std::vector<double> y(img.pixel_count());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  return y;
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Mean SSIM of the luma channels over all fully-contained windows, using a
// normalised Gaussian window (separable filtering).
inline double ssim(const ImageRGB& a, const ImageRGB& b, const SsimParams& p = {}) {
  if (a.width != b.width || a.height != b.height) throw InvalidArgument("image sizes differ");
  if (a.width < p.window || a.height < p.window) throw InvalidArgument("image smaller than SSIM window");
  const int w = a.width, h = a.height, k = p.window, r = k / 2;
  std::vector<double> g(k);
  double gs = 0.0;
  for (int i = 0; i < k; ++i) {
    g[i] = std::exp(-0.5 * (i - r) * (i - r) / (p.sigma * p.sigma));
    gs += g[i];
  }
  for (auto& x : g) x /= gs;

  const std::vector<double> x = luma(a), y = luma(b);
  const int ow = w - k + 1, oh = h - k + 1;
  // Horizontal pass then vertical pass for the five moment images.
  auto filter = [&](auto&& value) {
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < ow; ++u) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += g[i] * value(static_cast<std::size_t>(v) * w + u + i);
        tmp[static_cast<std::size_t>(v) * ow + u] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int v = 0; v < oh; ++v)
      for (int u = 0; u < ow; ++u) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(v + i) * ow + u];
        out[static_cast<std::size_t>(v) * ow + u] = s;
      }
    return out;
  };
  const auto mx = filter([&](std::size_t i) { return x[i]; });
  const auto my = filter([&](std::size_t i) { return y[i]; });
  const auto mxx = filter([&](std::size_t i) { return x[i] * x[i]; });
  const auto myy = filter([&](std::size_t i) { return y[i] * y[i]; });
  const auto mxy = filter([&](std::size_t i) { return x[i] * y[i]; });

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + p.c1) * (2.0 * cxy + p.c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + p.c1) * (vx + vy + p.c2));
  }
  return total / static_cast<double>(mx.size());
}

// RMSE over valid pixels. With sigma_k, only errors with
// |e| <= sigma_k * std(e) contribute; a zero spread trims nothing.
inline double depth_rmse(const std::vector<double>& pred, const std::vector<double>& gt,
                         const std::vector<char>& valid, std::optional<double> sigma_k = std::nullopt,
                         std::size_t* used = nullptr) {
  if (pred.size() != gt.size() || pred.size() != valid.size()) throw InvalidArgument("depth sizes differ");
  std::vector<double> err;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (valid[i]) err.push_back(pred[i] - gt[i]);
  if (err.empty()) {
    if (used) *used = 0;
    return std::numeric_limits<double>::quiet_NaN();
  }
  double limit = std::numeric_limits<double>::infinity();
  if (sigma_k) {
    double mean = 0.0;
    for (double e : err) mean += e;
    mean /= static_cast<double>(err.size());
    double var = 0.0;
    for (double e : err) var += (e - mean) * (e - mean);
    const double sd = std::sqrt(var / static_cast<double>(err.size()));
    if (sd > 0.0) limit = *sigma_k * sd;
  }
  double s = 0.0;
  std::size_t n = 0;
  for (double e : err) {
    if (std::abs(e) <= limit) {
      s += e * e;
      ++n;
    }
  }
  if (used) *used = n;
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(s / static_cast<double>(n));
}

struct DepthErrors {
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double rmse_1sigma = std::numeric_limits<double>::quiet_NaN();
  double rmse_2sigma = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
  std::size_t count_1sigma = 0;
  std::size_t count_2sigma = 0;
};

inline DepthErrors depth_errors(const std::vector<double>& pred, const std::vector<double>& gt,
                                const std::vector<char>& valid) {
  DepthErrors e;
  e.rmse = depth_rmse(pred, gt, valid, std::nullopt, &e.count);
  e.rmse_1sigma = depth_rmse(pred, gt, valid, 1.0, &e.count_1sigma);
  e.rmse_2sigma = depth_rmse(pred, gt, valid, 2.0, &e.count_2sigma);
  return e;
}

struct MetricsRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  DepthErrors depth;
};

// Columns: name PSNR SSIM LPIPS RMSE RMSE@1sigma RMSE@2sigma. LPIPS is not
// computed and always printed as n/a.
inline void write_metrics_table(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "name\tPSNR\tSSIM\tLPIPS\tRMSE[m]\tRMSE[m]@1sigma\tRMSE[m]@2sigma\n";
  auto num = [&](double x, int prec) {
    if (std::isnan(x)) {
      os << "n/a";
    } else {
      os << std::fixed << std::setprecision(prec) << x;
    }
  };
  for (const auto& r : rows) {
    os << r.name << '\t';
    num(r.psnr, 2);
    os << '\t';
    num(r.ssim, 3);
    os << "\tn/a\t";
    num(r.depth.rmse, 2);
    os << '\t';
    num(r.depth.rmse_1sigma, 2);
    os << '\t';
    num(r.depth.rmse_2sigma, 2);
    os << '\n';
  }
}

}  // namespace csnerf
