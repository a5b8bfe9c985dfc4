#include "terralabel/evaluation/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "terralabel/common/error.hpp"

namespace terralabel::evaluation {

namespace {

void require_texture(const GreyPatch& p, const char* what) {
  if (p.values.size() != p.height * p.width) throw InvalidArgument(std::string(what) + ": patch size mismatch");
  if (p.height * p.width < 2) throw InvalidArgument(std::string(what) + ": degenerate 1-pixel patch");
}

double covariance(std::span<const double> a, double ma, std::span<const double> b, double mb) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / double(a.size());
}

double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

std::vector<double> glcm_matrix(const GreyPatch& patch, std::size_t levels) {
  require_texture(patch, "glcm");
  std::vector<double> m(levels * levels, 0.0);
  auto count = [&](std::uint8_t a, std::uint8_t b) {
    if (a >= levels || b >= levels) throw InvalidArgument("glcm: grey value outside the level range");
    m[a * levels + b] += 1;
    m[b * levels + a] += 1;
  };
  for (std::size_t r = 0; r < patch.height; ++r)
    for (std::size_t c = 0; c < patch.width; ++c) {
      if (c + 1 < patch.width) count(patch.at(r, c), patch.at(r, c + 1));
      if (r + 1 < patch.height) count(patch.at(r, c), patch.at(r + 1, c));
    }
  double total = 0;
  for (double v : m) total += v;
  for (double& v : m) v /= total;
  return m;
}

GlcmStats glcm_stats(std::span<const double> matrix, std::size_t levels) {
  GlcmStats s;
  double asm_ = 0;
  for (std::size_t i = 0; i < levels; ++i)
    for (std::size_t j = 0; j < levels; ++j) {
      const double p = matrix[i * levels + j];
      const double d = double(i) - double(j);
      s.contrast += p * d * d;
      s.homogeneity += p / (1.0 + d * d);
      asm_ += p * p;
    }
  s.contrast /= double((levels - 1) * (levels - 1));
  s.energy = std::sqrt(asm_);
  return s;
}

double glcm_dissimilarity(const GlcmStats& a, const GlcmStats& b) {
  return std::abs(a.contrast - b.contrast) + std::abs(a.homogeneity - b.homogeneity) + std::abs(a.energy - b.energy);
}

double glcm_dissimilarity(const GreyPatch& a, const GreyPatch& b) {
  return glcm_dissimilarity(glcm_stats(glcm_matrix(a)), glcm_stats(glcm_matrix(b)));
}

std::uint8_t lbp_code(const GreyPatch& p, std::size_t r, std::size_t c) {
  // Circular order starting east, counter-clockwise.
  static constexpr int dr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  static constexpr int dc[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  const int centre = p.at(r, c);
  int bits[8];
  int ones = 0;
  for (int k = 0; k < 8; ++k) {
    const auto rr = std::clamp<long>(long(r) + dr[k], 0, long(p.height) - 1);
    const auto cc = std::clamp<long>(long(c) + dc[k], 0, long(p.width) - 1);
    bits[k] = p.at(std::size_t(rr), std::size_t(cc)) >= centre;
    ones += bits[k];
  }
  int transitions = 0;
  for (int k = 0; k < 8; ++k) transitions += bits[k] != bits[(k + 1) % 8];
  return static_cast<std::uint8_t>(transitions <= 2 ? ones : 9);
}

std::array<double, kLbpBins> lbp_histogram(const GreyPatch& patch) {
  require_texture(patch, "lbp");
  std::array<double, kLbpBins> h{};
  for (std::size_t r = 0; r < patch.height; ++r)
    for (std::size_t c = 0; c < patch.width; ++c) h[lbp_code(patch, r, c)] += 1;
  for (double& v : h) v /= double(patch.values.size());
  return h;
}

double lbp_similarity(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return std::clamp(s, 0.0, 1.0);
}

double lbp_similarity(const GreyPatch& a, const GreyPatch& b) {
  const auto ha = lbp_histogram(a), hb = lbp_histogram(b);
  return lbp_similarity(ha, hb);
}

double ssim(std::span<const double> a, std::span<const double> b, double dynamic_range) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("ssim: inputs must be non-empty and paired");
  const double c1 = std::pow(0.01 * dynamic_range, 2), c2 = std::pow(0.03 * dynamic_range, 2);
  const double ma = mean(a), mb = mean(b);
  // Variances go through the covariance routine so that ssim(x, x) == 1 exactly.
  const double va = covariance(a, ma, a, ma), vb = covariance(b, mb, b, mb), cab = covariance(a, ma, b, mb);
  return ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

double sam(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("sam: spectra differ in length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
}

}  // namespace terralabel::evaluation
