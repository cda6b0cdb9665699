// latentkit command line: toy generator, direction discovery, interpolation
// analysis, the Good/Bad quality gate and background flattening.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latentkit/latentkit.hpp"

namespace fs = std::filesystem;
using namespace latentkit;
using nlohmann::json;

namespace {

const char* kFormats = R"(Output formats:
  arrays      NPY v1.0, dtype <f8, C order
  directions  <name>.npy (latent_dim x k, unit columns) + <name>.json {method, scores, config, seed}
  images      binary PGM (P5, 8-bit), pixel byte = round((p + 1) / 2 * 255)
  text        NPY vector [word; sentence] of length word_dim + sentence_dim
CSV headers:
  distances.csv   index,distance,flagged
  frames.csv      index,gamma,file            (latent, text)
                  index,gamma1,gamma2,file    (triangular)
  compare.csv     first,second,abs_cos,sign
  ranking.csv     path,distance,predicted,actual
  trace.csv       step,loss
  ascent.csv      step,objective
Distance tables for --metric external: index,value rows (header optional).
Exit codes: 0 ok, 2 malformed input or usage, 3 numerical failure, 4 single-class training data.)";

struct Globals {
  std::uint64_t seed = 0;
  std::string out = ".";
  bool quiet = false;
};

Globals g;

fs::path out_path(const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void say(const std::string& line) {
  if (!g.quiet) std::cout << line << "\n";
}

void write_json(const fs::path& path, const json& j) { report::write_text(path, j.dump(2) + "\n"); }

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.pgm", i);
  return buf;
}

LatentCode load_latent(const GeneratorSpec& spec, const std::string& path) {
  LatentCode z{npy::read_vector(path)};
  if (z.size() != spec.dims().latent_dim)
    throw InvalidArgument(path + ": latent has length " + std::to_string(z.size()) + ", spec expects " +
                          std::to_string(spec.dims().latent_dim));
  return z;
}

TextEmbedding load_text(const GeneratorSpec& spec, const std::string& path) {
  if (path.empty()) return zero_embedding(spec);
  const Vector v = npy::read_vector(path);
  const std::size_t w = spec.dims().word_dim, s = spec.dims().sentence_dim;
  if (v.size() != w + s)
    throw InvalidArgument(path + ": text embedding has length " + std::to_string(v.size()) +
                          ", spec expects " + std::to_string(w + s) + " (word + sentence)");
  return {Vector(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(w)),
          Vector(v.begin() + static_cast<std::ptrdiff_t>(w), v.end())};
}

Matrix load_weights(const std::string& weights, const std::string& spec) {
  if (!weights.empty() && !spec.empty()) throw InvalidArgument("pass either --weights or --spec, not both");
  if (!weights.empty()) return npy::read_matrix(weights);
  if (!spec.empty()) return load_spec(spec).latent_weights();
  throw InvalidArgument("one of --weights or --spec is required");
}

Vector load_direction(const std::string& path, std::size_t index) {
  const Matrix m = npy::read_matrix(path);
  if (index >= m.cols())
    throw InvalidArgument(path + " has " + std::to_string(m.cols()) + " direction(s); --index " +
                          std::to_string(index) + " is out of range");
  return m.col(index);
}

// ---------------------------------------------------------------- gen

struct GenOptions {
  GeneratorDims dims;
  std::size_t latent_dim = 16;
  std::string spec, latent, text, direction, name;
  std::size_t index = 0;
  double scale = kDefaultIntensity;
};

void gen_spec(const GenOptions& o) {
  const GeneratorSpec spec = build_spec(o.dims, g.seed);
  const fs::path p = out_path(o.name.empty() ? "spec.json" : o.name + ".json");
  save_spec(p, spec);
  say("wrote " + p.string());
}

void gen_latent(const GenOptions& o) {
  std::size_t dim = o.latent_dim;
  if (!o.spec.empty()) dim = load_spec(o.spec).dims().latent_dim;
  Rng rng(g.seed);
  const LatentCode z = sample_latent(rng, dim);
  const fs::path p = out_path((o.name.empty() ? "z" : o.name) + ".npy");
  npy::write_vector(p, z.values);
  say("wrote " + p.string());
}

void gen_text(const GenOptions& o) {
  const GeneratorSpec spec = load_spec(o.spec);
  Rng rng(g.seed);
  Vector v(spec.dims().word_dim + spec.dims().sentence_dim);
  for (double& x : v) x = rng.normal();
  const fs::path p = out_path((o.name.empty() ? "t" : o.name) + ".npy");
  npy::write_vector(p, v);
  say("wrote " + p.string());
}

void gen_image(const GenOptions& o) {
  const GeneratorSpec spec = load_spec(o.spec);
  LatentCode z = load_latent(spec, o.latent);
  if (!o.direction.empty()) z = edit(z, {load_direction(o.direction, o.index)}, o.scale);
  const fs::path p = out_path((o.name.empty() ? "image" : o.name) + ".pgm");
  write_pgm(p, generate(spec, z, load_text(spec, o.text)));
  say("wrote " + p.string());
}

// ---------------------------------------------------------------- directions

struct DirectionOptions {
  std::string weights, spec, name = "N", normalize = "rows";
  std::size_t k = 8;
  std::size_t samples = kGanspaceDefaultSamples;
  std::size_t max_iter = 200;
  double tol = 1e-6;
  bool no_orthonormalize = false;
};

void run_directions(const std::string& method, const DirectionOptions& o) {
  DirectionSet set;
  if (method == "sefa") {
    set = sefa(load_weights(o.weights, o.spec), o.k, parse_sefa_normalization(o.normalize));
  } else if (method == "pca") {
    set = pca_weights(load_weights(o.weights, o.spec), o.k);
  } else if (method == "ganspace") {
    if (o.spec.empty()) throw InvalidArgument("ganspace needs --spec");
    Rng rng(g.seed);
    set = ganspace_sample(load_spec(o.spec), o.k, rng, o.samples);
  } else {
    IcaConfig cfg;
    cfg.components = o.k;
    cfg.max_iter = o.max_iter;
    cfg.tol = o.tol;
    cfg.seed = g.seed;
    cfg.ambient_orthonormalize = !o.no_orthonormalize;
    set = ica_orthogonal(load_weights(o.weights, o.spec), cfg);
  }
  set.seed = g.seed;
  save_direction_set(out_path(o.name), set);
  std::ostringstream msg;
  msg << method << ": " << set.count() << " directions in " << set.latent_dim() << "-d latent space -> "
      << out_path(o.name + ".npy").string();
  say(msg.str());
}

// ---------------------------------------------------------------- compare

void run_compare(const std::string& a, const std::string& b) {
  const Matrix n1 = npy::read_matrix(a), n2 = npy::read_matrix(b);
  const DirectionMatch m = match_directions(n1, n2);
  std::string csv = "first,second,abs_cos,sign\n";
  double lo = 1.0, sum = 0.0;
  for (std::size_t i = 0; i < m.scores.size(); ++i) {
    csv += std::to_string(i) + "," + std::to_string(m.permutation[i]) + "," + format_real(m.scores[i]) + "," +
           std::to_string(m.signs[i]) + "\n";
    lo = std::min(lo, m.scores[i]);
    sum += m.scores[i];
  }
  report::write_text(out_path("compare.csv"), csv);
  say("pairs=" + std::to_string(m.scores.size()) + " min_abs_cos=" + format_real(lo) +
      " mean_abs_cos=" + format_real(sum / static_cast<double>(m.scores.size())));
}

// ---------------------------------------------------------------- interp

struct InterpOptions {
  std::string spec, z0, z1, latent, text, t0, t1, t2, metric = "perceptual", distances;
  std::size_t steps = kDefaultSteps;
};

void emit_sequence(const DistanceSequence& seq, const std::string& title) {
  std::vector<std::size_t> flagged;
  double threshold = 0.0;
  if (seq.values.size() >= 3) {
    flagged = detect_discontinuity(seq);
    threshold = discontinuity_threshold(seq);
  } else {
    say("note: fewer than 3 distances, discontinuity detection skipped");
  }
  write_sequence_csv(out_path("distances.csv"), seq, flagged);
  report::write_text(out_path("distances.svg"),
                     report::sequence_svg(seq.values, threshold, flagged, title + " (" + to_string(seq.metric) + ")"));
  std::string line = "distances=" + std::to_string(seq.values.size()) + " threshold=" + format_real(threshold) +
                     " flagged=";
  for (std::size_t i = 0; i < flagged.size(); ++i) line += (i ? "," : "") + std::to_string(flagged[i]);
  if (flagged.empty()) line += "none";
  say(line);
}

DistanceSequence distances_for(const InterpOptions& o, MetricKind metric, std::size_t expected,
                               const std::function<DistanceSequence()>& compute) {
  if (metric != MetricKind::external_precomputed) {
    if (!o.distances.empty()) throw InvalidArgument("--distances is only used with --metric external");
    return compute();
  }
  if (o.distances.empty()) throw InvalidArgument("--metric external needs --distances <file.csv>");
  DistanceSequence seq = load_distance_table(o.distances);
  if (seq.values.size() != expected)
    throw InvalidArgument(o.distances + " has " + std::to_string(seq.values.size()) + " rows, expected " +
                          std::to_string(expected));
  return seq;
}

void run_interp(const std::string& kind, const InterpOptions& o) {
  const GeneratorSpec spec = load_spec(o.spec);
  const MetricKind metric = parse_metric(o.metric);
  Rng rng(g.seed);
  auto latent_or_sample = [&](const std::string& path) {
    return path.empty() ? sample_latent(rng, spec.dims().latent_dim) : load_latent(spec, path);
  };

  if (kind == "triangular") {
    const LatentCode z = latent_or_sample(o.latent);
    if (o.t0.empty() || o.t1.empty() || o.t2.empty()) throw InvalidArgument("triangular needs --t0, --t1 and --t2");
    const TriangularGrid grid =
        interp_triangular(spec, z, load_text(spec, o.t0), load_text(spec, o.t1), load_text(spec, o.t2), o.steps);
    std::string manifest = "index,gamma1,gamma2,file\n";
    for (std::size_t i = 0; i < grid.samples.size(); ++i) {
      write_pgm(out_path(frame_name(i)), grid.samples[i].image);
      manifest += std::to_string(i) + "," + format_real(grid.samples[i].gamma1) + "," +
                  format_real(grid.samples[i].gamma2) + "," + frame_name(i) + "\n";
    }
    report::write_text(out_path("frames.csv"), manifest);
    say("samples=" + std::to_string(grid.samples.size()));
    // Consecutive samples along each lattice row (fixed gamma2).
    const std::size_t comparisons = o.steps * (o.steps - 1) / 2;
    emit_sequence(distances_for(o, metric, comparisons,
                                [&] {
                                  DistanceSequence seq{{}, metric};
                                  for (std::size_t i = 0; i + 1 < grid.samples.size(); ++i)
                                    if (grid.samples[i].gamma2 == grid.samples[i + 1].gamma2)
                                      seq.values.push_back(
                                          distance(metric, grid.samples[i].image, grid.samples[i + 1].image));
                                  return seq;
                                }),
                  "triangular interpolation");
    return;
  }

  std::vector<ImageTensor> images;
  if (kind == "latent") {
    const LatentCode z0 = latent_or_sample(o.z0);
    const LatentCode z1 = latent_or_sample(o.z1);
    images = interp_latent(spec, z0, z1, load_text(spec, o.text), o.steps);
  } else {
    const LatentCode z = latent_or_sample(o.latent);
    if (o.t0.empty() || o.t1.empty()) throw InvalidArgument("text interpolation needs --t0 and --t1");
    images = interp_text(spec, z, load_text(spec, o.t0), load_text(spec, o.t1), o.steps);
  }
  const Vector gammas = interpolation_weights(o.steps);
  std::string manifest = "index,gamma,file\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_pgm(out_path(frame_name(i)), images[i]);
    manifest += std::to_string(i) + "," + format_real(gammas[i]) + "," + frame_name(i) + "\n";
  }
  report::write_text(out_path("frames.csv"), manifest);
  say("frames=" + std::to_string(images.size()));
  emit_sequence(distances_for(o, metric, images.size() - 1, [&] { return sequence_distances(metric, images); }),
                kind + " interpolation");
}

// ---------------------------------------------------------------- gate

struct GateOptions {
  std::string manifest, model, features = "raw-pixels";
  double ratio = 0.8;
  double c = 1.0;
  std::size_t pca_dim = kDefaultPixelPcaDim;
};

struct LoadedModel {
  SvmModel svm;
  FeatureExtractorKind kind = FeatureExtractorKind::raw_pixels;
  std::optional<PixelPca> pca;
};

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model " + path);
  LoadedModel m;
  const fs::path dir = fs::path(path).parent_path();
  try {
    json j;
    in >> j;
    m.kind = parse_feature_kind(j.at("features").get<std::string>());
    m.svm.weights = npy::read_vector(dir / j.at("weights").get<std::string>());
    m.svm.bias = j.at("bias").get<double>();
    m.svm.c = j.at("C").get<double>();
    m.svm.seed = j.value("seed", std::uint64_t{0});
    if (m.kind == FeatureExtractorKind::pca_pixels) {
      PixelPca p;
      p.mean = npy::read_vector(dir / j.at("pca").at("mean").get<std::string>());
      p.components = npy::read_matrix(dir / j.at("pca").at("components").get<std::string>());
      p.variances = j.at("pca").at("variances").get<Vector>();
      if (p.components.rows() != p.mean.size()) throw FormatError(path + ": PCA mean/components disagree");
      m.pca = std::move(p);
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return m;
}

std::vector<Vector> manifest_features(const DatasetManifest& m, FeatureExtractorKind kind, const PixelPca* pca) {
  std::vector<Vector> out;
  for (const auto& item : m.items) out.push_back(extract_features(kind, m, item, pca));
  return out;
}

std::vector<QualityLabel> manifest_labels(const DatasetManifest& m) {
  std::vector<QualityLabel> out;
  for (const auto& item : m.items) out.push_back(item.label);
  return out;
}

void run_gate(const std::string& action, const GateOptions& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  if (manifest.items.empty()) throw InvalidArgument(o.manifest + " has no items");

  if (action == "split") {
    const auto [train, test] = split_dataset(manifest, o.ratio, g.seed);
    save_manifest(out_path("train.json"), train);
    save_manifest(out_path("test.json"), test);
    say("train=" + std::to_string(train.items.size()) + " test=" + std::to_string(test.items.size()));
    return;
  }

  if (action == "train") {
    const FeatureExtractorKind kind = parse_feature_kind(o.features);
    std::optional<PixelPca> pca;
    if (kind == FeatureExtractorKind::pca_pixels) pca = fit_pixel_pca(load_manifest_images(manifest), o.pca_dim);
    const auto features = manifest_features(manifest, kind, pca ? &*pca : nullptr);
    SvmConfig cfg;
    cfg.c = o.c;
    cfg.seed = g.seed;
    const SvmModel model = svm_train(features, manifest_labels(manifest), cfg);
    npy::write_vector(out_path("model.npy"), model.weights);
    json j = to_json(model);
    j["features"] = to_string(kind);
    j["weights"] = "model.npy";
    if (pca) {
      npy::write_vector(out_path("pca_mean.npy"), pca->mean);
      npy::write_matrix(out_path("pca_components.npy"), pca->components);
      j["pca"] = {{"mean", "pca_mean.npy"}, {"components", "pca_components.npy"}, {"variances", pca->variances}};
    }
    write_json(out_path("model.json"), j);
    const EvaluationReport r = evaluate(model, features, manifest_labels(manifest));
    say("trained on " + std::to_string(features.size()) + " items, dim=" + std::to_string(model.weights.size()) +
        " train_accuracy=" + format_real(r.accuracy));
    return;
  }

  const LoadedModel model = load_model(o.model);
  const auto features = manifest_features(manifest, model.kind, model.pca ? &*model.pca : nullptr);
  const auto labels = manifest_labels(manifest);
  if (action == "eval") {
    const EvaluationReport r = evaluate(model.svm, features, labels);
    write_json(out_path("eval.json"),
               {{"accuracy", r.accuracy},
                {"total", r.total()},
                {"confusion", {{"tp", r.tp}, {"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}}}});
    say("accuracy=" + format_real(r.accuracy) + " tp=" + std::to_string(r.tp) + " tn=" + std::to_string(r.tn) +
        " fp=" + std::to_string(r.fp) + " fn=" + std::to_string(r.fn));
  } else {
    std::string csv = "path,distance,predicted,actual\n";
    for (const RankedItem& it : rank_by_distance(model.svm, features))
      csv += manifest.items[it.index].path + "," + format_real(it.distance) + "," + to_string(it.predicted) + "," +
             to_string(labels[it.index]) + "\n";
    report::write_text(out_path("ranking.csv"), csv);
    say("ranked " + std::to_string(features.size()) + " items");
  }
}

// ---------------------------------------------------------------- flatten

struct FlattenOptions {
  std::string spec, latent, text, direction, metric = "perceptual", name = "refined";
  std::size_t index = 0;
  FlattenConfig cfg;
  bool remove_background = false;
};

std::string trace_csv(const char* column, const Vector& values) {
  std::string csv = std::string("step,") + column + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) csv += std::to_string(i) + "," + format_real(values[i]) + "\n";
  return csv;
}

void run_flatten(FlattenOptions o) {
  const GeneratorSpec spec = load_spec(o.spec);
  if (o.latent.empty()) throw InvalidArgument("flatten needs --latent");
  const LatentCode z = load_latent(spec, o.latent);
  const TextEmbedding t = load_text(spec, o.text);
  o.cfg.metric = parse_metric(o.metric);
  if (o.cfg.metric == MetricKind::external_precomputed)
    throw InvalidArgument("flattening needs a differentiable metric (l1, l2 or perceptual)");

  RefinementTrace trace;
  json extra = json::object();
  if (o.remove_background) {
    const Matrix dirs = npy::read_matrix(o.direction);
    const BackgroundRemovalResult r = background_removal(spec, z, t, dirs, o.cfg, o.index);
    report::write_text(out_path("ascent.csv"), trace_csv("objective", r.ascent_objective));
    write_pgm(out_path("target.pgm"), r.target);
    npy::write_vector(out_path("target_latent.npy"), r.target_latent);
    extra = {{"mode", "remove-background"}, {"ascent_final", r.ascent_objective.back()}};
    trace = r.refinement;
  } else {
    trace = flatten_direction(spec, z, t, load_direction(o.direction, o.index), o.cfg);
  }

  DirectionSet set;
  set.method = "flatten";
  set.directions = Matrix(trace.final_direction.size(), 1, trace.final_direction);
  set.scores = {trace.final_loss};
  set.seed = g.seed;
  set.config = {{"source", fs::path(o.direction).filename().string()},
                {"index", o.index},
                {"intensity", o.cfg.intensity},
                {"metric", to_string(o.cfg.metric)},
                {"learning_rate", o.cfg.adam.learning_rate},
                {"betas", {o.cfg.adam.beta1, o.cfg.adam.beta2}},
                {"epsilon", o.cfg.adam.epsilon},
                {"steps", o.cfg.adam.steps},
                {"initial_loss", trace.initial_loss},
                {"final_loss", trace.final_loss}};
  set.config.update(extra);
  save_direction_set(out_path(o.name), set);
  report::write_text(out_path("trace.csv"), trace_csv("loss", trace.losses));
  write_pgm(out_path("before.pgm"), generate(spec, detail::edited(z, trace.initial_direction, o.cfg.intensity), t));
  write_pgm(out_path("after.pgm"), generate(spec, detail::edited(z, trace.final_direction, o.cfg.intensity), t));
  say("initial_loss=" + format_real(trace.initial_loss) + " final_loss=" + format_real(trace.final_loss));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentkit: semantic direction discovery and analysis on a toy text-to-image generator"};
  app.footer(kFormats);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", g.seed, "seed for every random draw");
  app.add_option("--out", g.out, "output directory (created if missing)");
  app.add_flag("--quiet", g.quiet, "suppress progress lines on stdout");

  // gen
  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "create toy specs, latents, text embeddings and images");
  gen_cmd->require_subcommand(1);
  auto* gen_spec_cmd = gen_cmd->add_subcommand("spec", "write a toy generator spec (weights derive from --seed)");
  gen_spec_cmd->add_option("--latent-dim", gen.dims.latent_dim);
  gen_spec_cmd->add_option("--word-dim", gen.dims.word_dim);
  gen_spec_cmd->add_option("--sentence-dim", gen.dims.sentence_dim);
  gen_spec_cmd->add_option("--hidden-dim", gen.dims.hidden_dim);
  gen_spec_cmd->add_option("--height", gen.dims.image_height);
  gen_spec_cmd->add_option("--width", gen.dims.image_width);
  gen_spec_cmd->add_option("--name", gen.name, "output stem (default spec)");
  auto* gen_latent_cmd = gen_cmd->add_subcommand("latent", "sample z ~ N(0, I) into <name>.npy");
  gen_latent_cmd->add_option("--dim", gen.latent_dim, "latent length (ignored with --spec)");
  gen_latent_cmd->add_option("--spec", gen.spec);
  gen_latent_cmd->add_option("--name", gen.name, "output stem (default z)");
  auto* gen_text_cmd = gen_cmd->add_subcommand("text", "sample a text embedding [word; sentence] into <name>.npy");
  gen_text_cmd->add_option("--spec", gen.spec)->required();
  gen_text_cmd->add_option("--name", gen.name, "output stem (default t)");
  auto* gen_image_cmd = gen_cmd->add_subcommand("image", "render one image, optionally edited z + scale * n");
  gen_image_cmd->add_option("--spec", gen.spec)->required();
  gen_image_cmd->add_option("--latent", gen.latent)->required();
  gen_image_cmd->add_option("--text", gen.text, "text embedding (zero when omitted)");
  gen_image_cmd->add_option("--direction", gen.direction, "direction NPY (vector or latent_dim x k)");
  gen_image_cmd->add_option("--index", gen.index, "column of --direction");
  gen_image_cmd->add_option("--scale", gen.scale, "edit intensity");
  gen_image_cmd->add_option("--name", gen.name, "output stem (default image)");

  // directions
  DirectionOptions dir;
  auto* dir_cmd = app.add_subcommand("directions", "discover semantic directions (writes <name>.npy + <name>.json)");
  dir_cmd->require_subcommand(1);
  std::vector<std::pair<std::string, CLI::App*>> dir_methods;
  for (const char* m : {"sefa", "pca", "ganspace", "ica"}) {
    auto* c = dir_cmd->add_subcommand(m, std::string(m) + " directions");
    c->add_option("-k", dir.k, "number of directions");
    c->add_option("--name", dir.name, "output stem");
    c->add_option("--spec", dir.spec, "toy generator spec JSON");
    if (std::string(m) != "ganspace") c->add_option("--weights", dir.weights, "weight matrix A (hidden x latent) NPY");
    dir_methods.emplace_back(m, c);
  }
  dir_methods[0].second->add_option("--normalize", dir.normalize, "rows, columns or none");
  dir_methods[2].second->add_option("-n,--samples", dir.samples, "number of sampled latents");
  dir_methods[3].second->add_option("--max-iter", dir.max_iter);
  dir_methods[3].second->add_option("--tol", dir.tol);
  dir_methods[3].second->add_flag("--no-orthonormalize", dir.no_orthonormalize,
                                  "skip the final N (N^T N)^-1/2 step");

  // compare
  std::string cmp_a, cmp_b;
  auto* cmp_cmd = app.add_subcommand("compare", "match two direction sets (writes compare.csv)");
  cmp_cmd->add_option("first", cmp_a)->required();
  cmp_cmd->add_option("second", cmp_b)->required();

  // interp
  InterpOptions interp;
  auto* interp_cmd = app.add_subcommand("interp", "interpolate and measure consecutive distances");
  interp_cmd->require_subcommand(1);
  std::vector<std::pair<std::string, CLI::App*>> interp_kinds;
  for (const char* k : {"latent", "text", "triangular"}) {
    auto* c = interp_cmd->add_subcommand(k, std::string(k) + " interpolation");
    c->add_option("--spec", interp.spec)->required();
    c->add_option("--steps", interp.steps, "points per edge (inclusive endpoints)");
    c->add_option("--metric", interp.metric, "l1, l2, perceptual or external");
    c->add_option("--distances", interp.distances, "index,value CSV for --metric external");
    interp_kinds.emplace_back(k, c);
  }
  interp_kinds[0].second->add_option("--z0", interp.z0, "start latent (sampled from --seed when omitted)");
  interp_kinds[0].second->add_option("--z1", interp.z1, "end latent (sampled from --seed when omitted)");
  interp_kinds[0].second->add_option("--text", interp.text, "text embedding (zero when omitted)");
  for (std::size_t i = 1; i < 3; ++i) {
    interp_kinds[i].second->add_option("--latent", interp.latent, "fixed latent (sampled when omitted)");
    interp_kinds[i].second->add_option("--t0", interp.t0);
    interp_kinds[i].second->add_option("--t1", interp.t1);
  }
  interp_kinds[2].second->add_option("--t2", interp.t2);

  // gate
  GateOptions gate;
  auto* gate_cmd = app.add_subcommand("gate", "Good/Bad quality gate");
  gate_cmd->require_subcommand(1);
  auto* split_cmd = gate_cmd->add_subcommand("split", "stratified split into train.json / test.json");
  split_cmd->add_option("--ratio", gate.ratio, "training fraction per class");
  auto* train_cmd = gate_cmd->add_subcommand("train", "fit a linear SVM (writes model.json + model.npy)");
  train_cmd->add_option("--features", gate.features, "raw-pixels, pca-pixels, raw-latent or external-file");
  train_cmd->add_option("--pca-dim", gate.pca_dim, "target dimension for pca-pixels");
  train_cmd->add_option("-C", gate.c, "regularization constant");
  auto* eval_cmd = gate_cmd->add_subcommand("eval", "accuracy and confusion counts (writes eval.json)");
  auto* rank_cmd = gate_cmd->add_subcommand("rank", "rank items by signed distance (writes ranking.csv)");
  for (auto* c : {split_cmd, train_cmd, eval_cmd, rank_cmd}) c->add_option("--manifest", gate.manifest)->required();
  for (auto* c : {eval_cmd, rank_cmd}) c->add_option("--model", gate.model)->required();

  // flatten
  FlattenOptions flat;
  auto* flat_cmd = app.add_subcommand("flatten", "refine a direction with the background-flattening loss");
  flat_cmd->add_option("--spec", flat.spec)->required();
  flat_cmd->add_option("--latent", flat.latent, "latent code NPY");
  flat_cmd->add_option("--text", flat.text, "text embedding (zero when omitted)");
  flat_cmd->add_option("--direction", flat.direction, "direction NPY (vector or latent_dim x k)")->required();
  flat_cmd->add_option("--index", flat.index, "column to refine");
  flat_cmd->add_option("--steps", flat.cfg.adam.steps);
  flat_cmd->add_option("--lr", flat.cfg.adam.learning_rate);
  flat_cmd->add_option("--beta1", flat.cfg.adam.beta1);
  flat_cmd->add_option("--beta2", flat.cfg.adam.beta2);
  flat_cmd->add_option("--eps", flat.cfg.adam.epsilon);
  flat_cmd->add_option("--intensity", flat.cfg.intensity, "edit length alpha");
  flat_cmd->add_option("--metric", flat.metric, "l1, l2 or perceptual");
  flat_cmd->add_option("--name", flat.name, "output stem");
  flat_cmd->add_flag("--remove-background", flat.remove_background,
                     "two-phase mode: search the span of all columns for an extreme target, then refine toward it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_spec_cmd) gen_spec(gen);
    else if (*gen_latent_cmd) gen_latent(gen);
    else if (*gen_text_cmd) gen_text(gen);
    else if (*gen_image_cmd) gen_image(gen);
    for (auto& [name, c] : dir_methods)
      if (*c) run_directions(name, dir);
    if (*cmp_cmd) run_compare(cmp_a, cmp_b);
    for (auto& [name, c] : interp_kinds)
      if (*c) run_interp(name, interp);
    for (auto [name, c] : {std::pair<std::string, CLI::App*>{"split", split_cmd}, {"train", train_cmd},
                           {"eval", eval_cmd}, {"rank", rank_cmd}})
      if (*c) run_gate(name, gate);
    if (*flat_cmd) run_flatten(flat);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
