#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentkit/error.hpp"
#include "latentkit/linalg.hpp"
#include "latentkit/random.hpp"

// Deterministic toy conditional generator
//
//   x = tanh(G_c · tanh(A z + E_w w + E_s s))
//
// A plays the role of the first dense layer of a text-to-image generator; the
// conditioning is a single additive layer and the image head is one dense map
// to H*W grayscale pixels. All weights are re-derived from (dims, seed).
namespace latentkit {

struct GeneratorDims {
  std::size_t latent_dim = 16;
  std::size_t word_dim = 8;
  std::size_t sentence_dim = 8;
  std::size_t hidden_dim = 64;
  std::size_t image_height = 16;
  std::size_t image_width = 16;

  std::size_t pixels() const { return image_height * image_width; }
  bool operator==(const GeneratorDims&) const = default;
};

struct LatentCode {
  Vector values;
  std::size_t size() const { return values.size(); }
  bool operator==(const LatentCode&) const = default;
};

// Pooled word embedding plus sentence embedding.
struct TextEmbedding {
  Vector word;
  Vector sentence;
  bool operator==(const TextEmbedding&) const = default;
};

// H x W grayscale image, row-major, pixels in [-1, 1].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  Vector pixels;

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool same_shape(const ImageTensor& o) const { return height == o.height && width == o.width; }
  bool operator==(const ImageTensor&) const = default;
};

class GeneratorSpec {
 public:
  // Builds a spec from explicit weights; shapes are checked against dims.
  static GeneratorSpec with_weights(GeneratorDims dims, std::uint64_t seed, Matrix latent_weights,
                                    Matrix word_weights, Matrix sentence_weights,
                                    Matrix image_weights) {
    check_dims(dims);
    auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
      if (m.rows() != r || m.cols() != c)
        throw InvalidArgument(std::string(name) + " has shape " + m.shape_string() + ", expected " +
                              std::to_string(r) + "x" + std::to_string(c));
      if (!all_finite(m.data())) throw InvalidArgument(std::string(name) + " has non-finite entries");
    };
    expect(latent_weights, dims.hidden_dim, dims.latent_dim, "latent weights");
    expect(word_weights, dims.hidden_dim, dims.word_dim, "word weights");
    expect(sentence_weights, dims.hidden_dim, dims.sentence_dim, "sentence weights");
    expect(image_weights, dims.pixels(), dims.hidden_dim, "image weights");
    GeneratorSpec s;
    s.dims_ = dims;
    s.seed_ = seed;
    s.a_ = std::move(latent_weights);
    s.e_w_ = std::move(word_weights);
    s.e_s_ = std::move(sentence_weights);
    s.g_c_ = std::move(image_weights);
    return s;
  }

  static void check_dims(const GeneratorDims& d) {
    if (d.latent_dim == 0 || d.word_dim == 0 || d.sentence_dim == 0 || d.hidden_dim == 0 ||
        d.image_height == 0 || d.image_width == 0)
      throw InvalidArgument("generator dimensions must all be >= 1");
  }

  const GeneratorDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  // First dense layer A (hidden x latent).
  const Matrix& latent_weights() const { return a_; }
  const Matrix& word_weights() const { return e_w_; }
  const Matrix& sentence_weights() const { return e_s_; }
  // Image head G_c (pixels x hidden).
  const Matrix& image_weights() const { return g_c_; }

 private:
  GeneratorDims dims_;
  std::uint64_t seed_ = 0;
  Matrix a_, e_w_, e_s_, g_c_;
};

namespace detail {

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
  for (double& v : m.data()) v = rng.normal(0.0, stddev);
  return m;
}

}  // namespace detail

// Draws every weight from N(0, 1/sqrt(fan_in)) in the fixed order A, E_w, E_s, G_c.
inline GeneratorSpec build_spec(const GeneratorDims& dims, std::uint64_t seed) {
  GeneratorSpec::check_dims(dims);
  Rng rng(seed);
  Matrix a = detail::gaussian_matrix(rng, dims.hidden_dim, dims.latent_dim);
  Matrix ew = detail::gaussian_matrix(rng, dims.hidden_dim, dims.word_dim);
  Matrix es = detail::gaussian_matrix(rng, dims.hidden_dim, dims.sentence_dim);
  Matrix gc = detail::gaussian_matrix(rng, dims.pixels(), dims.hidden_dim);
  return GeneratorSpec::with_weights(dims, seed, std::move(a), std::move(ew), std::move(es),
                                     std::move(gc));
}

inline TextEmbedding zero_embedding(const GeneratorSpec& spec) {
  return {Vector(spec.dims().word_dim, 0.0), Vector(spec.dims().sentence_dim, 0.0)};
}

inline void check_inputs(const GeneratorSpec& spec, const LatentCode& z, const TextEmbedding& t) {
  const auto& d = spec.dims();
  if (z.size() != d.latent_dim)
    throw InvalidArgument("latent code has length " + std::to_string(z.size()) + ", expected " +
                          std::to_string(d.latent_dim));
  if (t.word.size() != d.word_dim || t.sentence.size() != d.sentence_dim)
    throw InvalidArgument("text embedding dims (" + std::to_string(t.word.size()) + "," +
                          std::to_string(t.sentence.size()) + ") do not match spec (" +
                          std::to_string(d.word_dim) + "," + std::to_string(d.sentence_dim) + ")");
  if (!all_finite(z.values) || !all_finite(t.word) || !all_finite(t.sentence))
    throw InvalidArgument("generator inputs must be finite");
}

// Hidden pre-activation A z + E_w w + E_s s.
inline Vector pre_activation(const GeneratorSpec& spec, const LatentCode& z, const TextEmbedding& t) {
  check_inputs(spec, z, t);
  Vector h = spec.latent_weights() * z.values;
  const Vector hw = spec.word_weights() * t.word;
  const Vector hs = spec.sentence_weights() * t.sentence;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = h[i] + hw[i] + hs[i];
  return h;
}

inline ImageTensor generate(const GeneratorSpec& spec, const LatentCode& z, const TextEmbedding& t) {
  Vector h = pre_activation(spec, z, t);
  for (double& v : h) v = std::tanh(v);
  Vector x = spec.image_weights() * h;
  for (double& v : x) v = std::tanh(v);
  return {spec.dims().image_height, spec.dims().image_width, std::move(x)};
}

// Vector-Jacobian product of generate() with respect to z:
// Aᵀ diag(1 - h²) G_cᵀ diag(1 - x²) cotangent.
inline Vector generate_vjp(const GeneratorSpec& spec, const LatentCode& z, const TextEmbedding& t,
                           const ImageTensor& cotangent) {
  const auto& d = spec.dims();
  if (cotangent.height != d.image_height || cotangent.width != d.image_width ||
      cotangent.pixels.size() != d.pixels())
    throw InvalidArgument("cotangent shape does not match generator image shape");
  Vector h = pre_activation(spec, z, t);
  for (double& v : h) v = std::tanh(v);
  Vector x = spec.image_weights() * h;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = std::tanh(x[i]);
    x[i] = (1.0 - xi * xi) * cotangent.pixels[i];
  }
  Vector gh = transpose_times(spec.image_weights(), x);
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= 1.0 - h[i] * h[i];
  return transpose_times(spec.latent_weights(), gh);
}

inline LatentCode sample_latent(Rng& rng, std::size_t dim) {
  if (dim == 0) throw InvalidArgument("latent dimension must be >= 1");
  LatentCode z{Vector(dim)};
  for (double& v : z.values) v = rng.normal();
  return z;
}

// --- serialization -----------------------------------------------------------

inline nlohmann::json to_json(const GeneratorSpec& spec) {
  const auto& d = spec.dims();
  return {{"latent_dim", d.latent_dim},     {"word_dim", d.word_dim},
          {"sentence_dim", d.sentence_dim}, {"hidden_dim", d.hidden_dim},
          {"image_height", d.image_height}, {"image_width", d.image_width},
          {"seed", spec.seed()}};
}

// Rebuilds a spec from its JSON header; weights are re-derived from the seed.
inline GeneratorSpec spec_from_json(const nlohmann::json& j) {
  try {
    GeneratorDims d;
    d.latent_dim = j.value("latent_dim", d.latent_dim);
    d.word_dim = j.value("word_dim", d.word_dim);
    d.sentence_dim = j.value("sentence_dim", d.sentence_dim);
    d.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    d.image_height = j.value("image_height", d.image_height);
    d.image_width = j.value("image_width", d.image_width);
    return build_spec(d, j.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("generator spec: ") + e.what());
  }
}

inline GeneratorSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open generator spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

inline void save_spec(const std::filesystem::path& path, const GeneratorSpec& spec) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json(spec).dump(2) << "\n";
}

inline std::uint8_t pixel_to_byte(double p) {
  const double v = std::round((std::clamp(p, -1.0, 1.0) + 1.0) / 2.0 * 255.0);
  return static_cast<std::uint8_t>(v);
}

inline double byte_to_pixel(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::filesystem::path& path, const ImageTensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(pixel_to_byte(img.pixels[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ImageTensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    if (!in || v <= 0) throw FormatError(path.string() + ": malformed PGM header");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_int();
  const std::size_t h = next_int();
  const std::size_t maxval = next_int();
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  in.get();
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError(path.string() + ": truncated PGM payload");
  ImageTensor img{h, w, Vector(w * h)};
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = byte_to_pixel(bytes[i]);
  return img;
}

}  // namespace latentkit
