#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "latentkit/error.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/random.hpp"

// Image distances, consecutive-pair distance sequences and jump detection.
namespace latentkit {

enum class MetricKind { l1_mean, l2_mean, perceptual_fixed, external_precomputed };

inline std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::l1_mean: return "l1-mean";
    case MetricKind::l2_mean: return "l2-mean";
    case MetricKind::perceptual_fixed: return "perceptual-fixed";
    case MetricKind::external_precomputed: return "external-precomputed";
  }
  return "unknown";
}

inline MetricKind parse_metric(const std::string& name) {
  if (name == "l1-mean" || name == "l1") return MetricKind::l1_mean;
  if (name == "l2-mean" || name == "l2") return MetricKind::l2_mean;
  if (name == "perceptual-fixed" || name == "perceptual") return MetricKind::perceptual_fixed;
  if (name == "external-precomputed" || name == "external") return MetricKind::external_precomputed;
  throw InvalidArgument("unknown metric '" + name + "'");
}

// Fixed multi-scale filter bank standing in for a learned perceptual metric.
//
// Two scales (full resolution and a 2x2 mean-pooled copy). At each scale the
// image is correlated with 8 zero-padded 3x3 filters, the 8 responses at each
// position are normalized to unit length, and the scale contributes the
// position-averaged squared distance between normalized feature vectors.
class PerceptualFilterBank {
 public:
  static constexpr std::size_t kChannels = 8;
  static constexpr std::size_t kScales = 2;
  static constexpr std::uint64_t kSeed = 0x1F1F7E25ULL;
  static constexpr double kNormEps = 1e-10;

  using Kernel = std::array<double, 9>;

  static const PerceptualFilterBank& instance() {
    static const PerceptualFilterBank bank;
    return bank;
  }

  const std::array<Kernel, kChannels>& kernels() const { return kernels_; }

  double distance(const ImageTensor& a, const ImageTensor& b) const {
    double total = 0.0;
    ImageTensor pa = a, pb = b;
    for (std::size_t s = 0; s < kScales; ++s) {
      if (pa.height == 0 || pa.width == 0) break;
      const Features fa = features(pa);
      const Features fb = features(pb);
      double acc = 0.0;
      for (std::size_t i = 0; i < fa.normalized.size(); ++i) {
        const double d = fa.normalized[i] - fb.normalized[i];
        acc += d * d;
      }
      total += acc / static_cast<double>(pa.height * pa.width);
      pa = pool(pa);
      pb = pool(pb);
    }
    return total;
  }

  // Gradient of distance(a, b) with respect to the pixels of b.
  Vector gradient(const ImageTensor& a, const ImageTensor& b) const {
    Vector grad(b.pixels.size(), 0.0);
    ImageTensor pa = a, pb = b;
    // Pixel-to-original-index weights accumulate through pooling levels.
    std::size_t stride = 1;
    for (std::size_t s = 0; s < kScales; ++s) {
      if (pa.height == 0 || pa.width == 0) break;
      const Features fa = features(pa);
      const Features fb = features(pb);
      const std::size_t h = pb.height, w = pb.width, npos = h * w;
      const double inv_p = 1.0 / static_cast<double>(npos);
      // d/d raw through the per-position normalization.
      Vector graw(kChannels * npos);
      for (std::size_t p = 0; p < npos; ++p) {
        double proj = 0.0;
        std::array<double, kChannels> gn{};
        for (std::size_t c = 0; c < kChannels; ++c) {
          gn[c] = 2.0 * inv_p * (fb.normalized[c * npos + p] - fa.normalized[c * npos + p]);
          proj += fb.raw[c * npos + p] * gn[c];
        }
        const double r = fb.norms[p];
        for (std::size_t c = 0; c < kChannels; ++c)
          graw[c * npos + p] = gn[c] / r - fb.raw[c * npos + p] * proj / (r * r * r);
      }
      // Adjoint of the zero-padded correlation.
      Vector gimg(npos, 0.0);
      for (std::size_t c = 0; c < kChannels; ++c) {
        const Kernel& k = kernels_[c];
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double g = graw[c * npos + y * w + x];
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                  continue;
                gimg[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] +=
                    k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] * g;
              }
          }
      }
      // Each pooled pixel is the mean of a stride x stride block of the input.
      const double share = 1.0 / static_cast<double>(stride * stride);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t by = 0; by < stride; ++by)
            for (std::size_t bx = 0; bx < stride; ++bx)
              grad[(y * stride + by) * b.width + x * stride + bx] += share * gimg[y * w + x];
      pa = pool(pa);
      pb = pool(pb);
      stride *= 2;
    }
    return grad;
  }

  // 2x2 mean pooling; a trailing odd row/column is dropped.
  static ImageTensor pool(const ImageTensor& img) {
    ImageTensor out{img.height / 2, img.width / 2, {}};
    out.pixels.resize(out.height * out.width);
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x)
        out.pixels[y * out.width + x] =
            0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) + img.at(2 * y + 1, 2 * x) +
                    img.at(2 * y + 1, 2 * x + 1));
    return out;
  }

 private:
  struct Features {
    Vector raw;         // channel-major, kChannels x (h*w)
    Vector normalized;  // raw / norms, per position
    Vector norms;       // sqrt(sum_c raw^2 + eps)
  };

  PerceptualFilterBank() {
    Rng rng(kSeed);
    for (auto& k : kernels_)
      for (double& v : k) v = rng.normal();
  }

  Features features(const ImageTensor& img) const {
    const std::size_t h = img.height, w = img.width, npos = h * w;
    Features f{Vector(kChannels * npos, 0.0), Vector(kChannels * npos), Vector(npos)};
    for (std::size_t c = 0; c < kChannels; ++c) {
      const Kernel& k = kernels_[c];
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                continue;
              acc += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] *
                     img.pixels[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            }
          f.raw[c * npos + y * w + x] = acc;
        }
    }
    for (std::size_t p = 0; p < npos; ++p) {
      double ss = kNormEps;
      for (std::size_t c = 0; c < kChannels; ++c) ss += f.raw[c * npos + p] * f.raw[c * npos + p];
      f.norms[p] = std::sqrt(ss);
      for (std::size_t c = 0; c < kChannels; ++c)
        f.normalized[c * npos + p] = f.raw[c * npos + p] / f.norms[p];
    }
    return f;
  }

  std::array<Kernel, kChannels> kernels_{};
};

inline void check_same_shape(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b) || a.pixels.size() != b.pixels.size())
    throw InvalidArgument("image shapes differ: " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                          std::to_string(b.width));
}

// l1-mean: mean |a - b|; l2-mean: mean (a - b)^2; perceptual-fixed: filter-bank distance.
inline double distance(MetricKind metric, const ImageTensor& a, const ImageTensor& b) {
  check_same_shape(a, b);
  const double n = static_cast<double>(a.pixels.size());
  switch (metric) {
    case MetricKind::l1_mean: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
      return s / n;
    }
    case MetricKind::l2_mean: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
      }
      return s / n;
    }
    case MetricKind::perceptual_fixed:
      return PerceptualFilterBank::instance().distance(a, b);
    case MetricKind::external_precomputed:
      throw InvalidArgument("external-precomputed distances come from a table, not from images");
  }
  return 0.0;
}

// Gradient of distance(metric, a, b) with respect to b. The l1 term uses the
// sign subgradient, zero at exact ties.
inline Vector distance_gradient(MetricKind metric, const ImageTensor& a, const ImageTensor& b) {
  check_same_shape(a, b);
  const double n = static_cast<double>(a.pixels.size());
  Vector g(b.pixels.size(), 0.0);
  switch (metric) {
    case MetricKind::l1_mean:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = b.pixels[i] - a.pixels[i];
        g[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
      }
      return g;
    case MetricKind::l2_mean:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (b.pixels[i] - a.pixels[i]) / n;
      return g;
    case MetricKind::perceptual_fixed:
      return PerceptualFilterBank::instance().gradient(a, b);
    case MetricKind::external_precomputed:
      throw InvalidArgument("external-precomputed metric has no gradient");
  }
  return g;
}

struct DistanceSequence {
  Vector values;
  MetricKind metric = MetricKind::l1_mean;
};

// values[i] = distance(images[i], images[i + 1]).
inline DistanceSequence sequence_distances(MetricKind metric, const std::vector<ImageTensor>& images) {
  if (images.size() < 2)
    throw InvalidArgument("a distance sequence needs at least 2 images, got " +
                          std::to_string(images.size()));
  DistanceSequence seq{Vector(images.size() - 1), metric};
  for (std::size_t i = 0; i + 1 < images.size(); ++i)
    seq.values[i] = distance(metric, images[i], images[i + 1]);
  return seq;
}

// Flags values above median + k * (mad_scale * MAD).
struct DiscontinuityPolicy {
  double k = 3.0;
  double mad_scale = 1.4826;
};

inline double median(Vector v) {
  if (v.empty()) throw InvalidArgument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double discontinuity_threshold(const DistanceSequence& seq, const DiscontinuityPolicy& policy = {}) {
  const double med = median(seq.values);
  Vector dev(seq.values.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = std::abs(seq.values[i] - med);
  return med + policy.k * policy.mad_scale * median(std::move(dev));
}

inline std::vector<std::size_t> detect_discontinuity(const DistanceSequence& seq,
                                                     const DiscontinuityPolicy& policy = {}) {
  if (seq.values.size() < 3)
    throw InvalidArgument("discontinuity detection needs at least 3 values, got " +
                          std::to_string(seq.values.size()));
  const double threshold = discontinuity_threshold(seq, policy);
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < seq.values.size(); ++i)
    if (seq.values[i] > threshold) flagged.push_back(i);
  return flagged;
}

// Reads an `index,value` table (optional header row) as an external-precomputed sequence.
inline DistanceSequence load_distance_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open distance table " + path.string());
  std::vector<std::pair<long, double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected index,value");
    const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
    try {
      std::size_t used = 0;
      const long idx = std::stol(a, &used);
      if (used != a.size()) throw std::invalid_argument("index");
      const double val = std::stod(b, &used);
      if (used != b.size() || !std::isfinite(val) || val < 0.0) throw std::invalid_argument("value");
      rows.emplace_back(idx, val);
    } catch (const std::exception&) {
      if (lineno == 1 && rows.empty()) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].first != static_cast<long>(i))
      throw FormatError(path.string() + ": indices must run 0, 1, 2, ... in order");
  DistanceSequence seq{Vector(rows.size()), MetricKind::external_precomputed};
  for (std::size_t i = 0; i < rows.size(); ++i) seq.values[i] = rows[i].second;
  return seq;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Writes `index,distance,flagged`.
inline void write_sequence_csv(const std::filesystem::path& path, const DistanceSequence& seq,
                               const std::vector<std::size_t>& flagged) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::set<std::size_t> marks(flagged.begin(), flagged.end());
  out << "index,distance,flagged\n";
  for (std::size_t i = 0; i < seq.values.size(); ++i)
    out << i << "," << format_real(seq.values[i]) << "," << (marks.count(i) ? 1 : 0) << "\n";
}

}  // namespace latentkit
