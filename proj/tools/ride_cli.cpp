// Command-line front end: corpus generation, training, feature extraction,
// matching and the evaluation harnesses.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ride/config.hpp"
#include "ride/evaluation.hpp"
#include "ride/metrics.hpp"
#include "ride/pose.hpp"
#include "ride/selfsup.hpp"
#include "ride/selftest.hpp"
#include "ride/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::int64_t topk = 10000;
  double temperature = 0.1;
  double threshold = 0.9;
  std::string matcher = "mnn";
  std::string config;
  std::string out;
  std::string checkpoint;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  if (path.empty()) throw ride::ContractError("--out is required");
  std::ofstream out(path);
  if (!out) throw ride::IoError("cannot write " + path);
  return out;
}

void close_out(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw ride::IoError("failed writing " + path);
}

ride::MatcherOptions matcher_options(const Common& c) {
  ride::MatcherOptions m;
  m.kind = ride::parse_matcher(c.matcher);
  m.temperature = c.temperature;
  m.threshold = c.threshold;
  return m;
}

ride::RideModel load_model(const Common& c) {
  if (c.checkpoint.empty()) throw ride::ContractError("--checkpoint is required");
  return ride::RideModel::load(c.checkpoint);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ride::ContractError("cannot parse " + what + " '" + s + "'");
  }
}

int cmd_gen_corpus(const Common& c, int count, std::int64_t size, bool disk) {
  if (c.out.empty()) throw ride::ContractError("--out is required");
  fs::create_directories(c.out);
  const ride::Rng root(c.seed);
  const auto images = ride::synth_corpus(root.substream("corpus"), count, size);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "texture_%04zu.pgm", i);
    ride::write_pgm(fs::path(c.out) / name, disk ? ride::disk_mask(images[i]) : images[i]);
  }
  std::cout << "wrote " << images.size() << " images to " << c.out << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& corpus_dir, std::int64_t iterations, bool seed_given) {
  ride::KeyValueConfig kv = c.config.empty() ? ride::KeyValueConfig{} : ride::KeyValueConfig::load(c.config);
  if (seed_given) kv.set("seed", std::to_string(c.seed));
  if (iterations >= 0) kv.set("iterations", std::to_string(iterations));
  const ride::TrainConfig cfg = ride::TrainConfig::from_config(kv);
  if (c.out.empty()) throw ride::ContractError("--out is required");
  fs::create_directories(c.out);

  std::vector<ride::Image> corpus;
  for (const auto& p : ride::list_images(corpus_dir)) corpus.push_back(ride::read_image(p));
  if (corpus.empty()) throw ride::ContractError("no images found in " + corpus_dir);

  ride::Rng rng(cfg.seed);
  ride::RideModel model(cfg.model, rng);
  ride::TrainOutputs outputs;
  outputs.directory = fs::path(c.out);
  outputs.on_record = [&](const ride::TrainRecord& r) {
    if (r.skipped_pairs > 0) std::cerr << "iteration " << r.iteration << ": skipped " << r.skipped_pairs << " pair(s) without correspondences\n";
    if (r.iteration % 50 == 0 || r.validation_mma)
      std::cerr << "iteration " << r.iteration << " total " << num(r.total)
                << (r.validation_mma ? " val_mma " + num(*r.validation_mma) : std::string()) << "\n";
  };
  const auto result = ride::train(model, corpus, cfg, outputs);
  for (const auto& r : result.log) {
    if (!std::isfinite(r.total)) {
      std::cerr << "non-finite loss at iteration " << r.iteration << "\n";
      return 1;
    }
  }
  std::cout << "iterations " << result.log.size() << " best_iteration " << result.best_iteration
            << " best_val_mma " << num(result.best_validation_mma) << "\n";
  return 0;
}

int cmd_describe(const Common& c, const std::string& image_path) {
  if (c.topk < 1) throw ride::ContractError("--topk must be positive");
  auto model = load_model(c);
  const ride::Features f = ride::describe_image(model, ride::read_image(image_path), c.topk);
  if (c.out.empty()) throw ride::ContractError("--out is required");
  ride::save_tensors(c.out, ride::features_to_tensors(f));
  std::cout << f.size() << " keypoints\n";
  return 0;
}

int cmd_match(const Common& c, const std::string& a, const std::string& b) {
  const auto fa = ride::features_from_tensors(ride::load_tensors(a));
  const auto fb = ride::features_from_tensors(ride::load_tensors(b));
  const auto m = ride::match_features(fa, fb, matcher_options(c));
  auto out = open_out(c.out);
  out << "index_a,index_b,score,xa,ya,xb,yb\n";
  for (const auto& x : m.matches) {
    const auto& pa = fa.positions[static_cast<std::size_t>(x.a)];
    const auto& pb = fb.positions[static_cast<std::size_t>(x.b)];
    out << x.a << ',' << x.b << ',' << num(x.score) << ',' << num(pa.x()) << ',' << num(pa.y()) << ','
        << num(pb.x()) << ',' << num(pb.y()) << '\n';
  }
  close_out(out, c.out);
  std::cout << m.size() << " matches\n";
  return 0;
}

int cmd_eval_rotation(const Common& c, const std::string& images_dir) {
  auto model = load_model(c);
  std::vector<ride::Image> images;
  for (const auto& p : ride::list_images(images_dir)) images.push_back(ride::read_image(p));
  if (images.empty()) throw ride::ContractError("no images found in " + images_dir);
  const auto angles = ride::default_sweep_angles();
  const auto rows = ride::rotation_sweep(model, images, angles, c.topk, matcher_options(c));
  auto out = open_out(c.out);
  out << "angle,mma3,mma5,mma10\n";
  for (const auto& r : rows) out << num(r.angle) << ',' << num(r.mma3) << ',' << num(r.mma5) << ',' << num(r.mma10) << '\n';
  close_out(out, c.out);
  return 0;
}

int cmd_eval_pose(const Common& c, const std::string& pairs_file, int ransac_iterations, double threshold_px) {
  auto model = load_model(c);
  std::ifstream in(pairs_file);
  if (!in) throw ride::IoError("cannot open pair list " + pairs_file);
  const fs::path base = fs::path(pairs_file).parent_path();
  auto out = open_out(c.out);
  out << "pair,rot_err,trans_err,combined,inliers\n";
  std::vector<double> errors;
  std::string line;
  int pair_id = 0;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 6 && tok.size() != 18)
      throw ride::ContractError("pair line needs 'imageA imageB fx fy cx cy' and optionally 9 R + 3 t values");
    ride::CameraIntrinsics cam{to_double(tok[2], "fx"), to_double(tok[3], "fy"), to_double(tok[4], "cx"),
                               to_double(tok[5], "cy")};
    const auto fa = ride::describe_image(model, ride::read_image(resolve(base, tok[0])), c.topk);
    const auto fb = ride::describe_image(model, ride::read_image(resolve(base, tok[1])), c.topk);
    const auto m = ride::match_features(fa, fb, matcher_options(c));
    std::vector<Eigen::Vector2d> pa, pb;
    for (const auto& x : m.matches) {
      pa.push_back(fa.positions[static_cast<std::size_t>(x.a)]);
      pb.push_back(fb.positions[static_cast<std::size_t>(x.b)]);
    }
    ride::RansacOptions ro;
    ro.iterations = ransac_iterations;
    ro.threshold_px = threshold_px;
    ro.seed = c.seed + static_cast<std::uint64_t>(pair_id);
    const auto est = ride::estimate_relative_pose(pa, pb, cam, cam, ro);
    out << pair_id << ',';
    if (tok.size() == 18 && est.valid) {
      Eigen::Matrix3d r;
      Eigen::Vector3d t;
      for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = to_double(tok[static_cast<std::size_t>(6 + i)], "R");
      for (int i = 0; i < 3; ++i) t(i) = to_double(tok[static_cast<std::size_t>(15 + i)], "t");
      const auto e = ride::pose_error(est.rotation, est.translation, r, t);
      errors.push_back(e.combined);
      out << num(e.rotation_deg) << ',' << num(e.translation_deg) << ',' << num(e.combined);
    } else if (tok.size() == 18) {
      errors.push_back(std::numeric_limits<double>::infinity());
      out << "inf,inf,inf";
    } else {
      out << ",,";
    }
    out << ',' << est.inliers.size() << '\n';
    ++pair_id;
  }
  close_out(out, c.out);
  if (!errors.empty()) {
    const auto auc = ride::pose_error_auc(errors, ride::kPoseAucThresholds);
    std::cout << "auc@5 " << num(auc[0]) << " auc@10 " << num(auc[1]) << " auc@20 " << num(auc[2]) << "\n";
  }
  return 0;
}

int cmd_eval_track(const Common& c, const std::string& sequence_file) {
  auto model = load_model(c);
  std::ifstream in(sequence_file);
  if (!in) throw ride::IoError("cannot open sequence " + sequence_file);
  const fs::path base = fs::path(sequence_file).parent_path();
  std::vector<ride::Image> frames;
  std::vector<std::vector<Eigen::Vector2d>> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() % 2 != 1) throw ride::ContractError("sequence line needs an image followed by x y pairs");
    frames.push_back(ride::read_image(resolve(base, tok[0])));
    std::vector<Eigen::Vector2d> pts;
    for (std::size_t i = 1; i < tok.size(); i += 2) pts.emplace_back(to_double(tok[i], "x"), to_double(tok[i + 1], "y"));
    if (!labels.empty() && pts.size() != labels.front().size())
      throw ride::ContractError("every frame must label the same tracking points");
    labels.push_back(std::move(pts));
  }
  if (frames.size() < 2) throw ride::ContractError("a sequence needs at least two frames");
  const std::vector<std::vector<Eigen::Vector2d>> truths(labels.begin() + 1, labels.end());
  const auto result = ride::evaluate_tracking(model, frames, labels.front(), truths, c.topk, matcher_options(c));
  auto out = open_out(c.out);
  out << "point,mean_error_fraction\n";
  for (std::size_t p = 0; p < result.per_point.size(); ++p)
    out << p << ',' << (std::isnan(result.per_point[p]) ? std::string() : num(result.per_point[p])) << '\n';
  close_out(out, c.out);
  std::cout << "mean error fraction " << num(result.mean) << "\n";
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto r = ride::toy_loss_gradcheck(c.seed);
  std::ostringstream report;
  report << "checked " << r.checked << " passed " << r.passed << " fraction " << num(r.pass_fraction())
         << " max_rel " << num(r.max_relative_error) << " median_rel " << num(r.median_relative_error) << "\n";
  std::cout << report.str();
  if (!c.out.empty()) {
    auto out = open_out(c.out);
    out << report.str();
    close_out(out, c.out);
  }
  return r.pass_fraction() >= 0.99 ? 0 : 1;
}

int cmd_selftest(const Common& c) {
  const auto results = ride::run_selftest(c.seed);
  std::ostringstream report;
  bool ok = true;
  for (const auto& r : results) {
    report << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) report << " (" << r.detail << ")";
    report << "\n";
    ok = ok && r.passed;
  }
  std::cout << report.str();
  if (!c.out.empty()) {
    auto out = open_out(c.out);
    out << report.str();
    close_out(out, c.out);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-equivariant keypoint detection and description"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* sub, bool matching) {
    sub->add_option("--seed", c.seed, "Seed for every random stream");
    sub->add_option("--out", c.out, "Output path");
    if (matching) {
      sub->add_option("--topk", c.topk, "Keypoints per image");
      sub->add_option("--matcher", c.matcher, "mnn or dual-softmax")->check(CLI::IsMember({"mnn", "dual-softmax"}));
      sub->add_option("--temperature", c.temperature, "Dual-softmax temperature");
      sub->add_option("--threshold", c.threshold, "Dual-softmax probability threshold");
    }
  };

  int count = 64;
  std::int64_t size = 182;
  bool disk = false;
  auto* gen = app.add_subcommand("gen-corpus", "Write synthetic training textures (PGM)");
  add_common(gen, false);
  gen->add_option("--count", count, "Number of images");
  gen->add_option("--size", size, "Image side in pixels");
  gen->add_flag("--disk", disk, "Blend into mid-gray outside a centered disk");

  std::string corpus;
  std::int64_t iterations = -1;
  auto* train = app.add_subcommand("train", "Train from a corpus directory");
  add_common(train, false);
  train->add_option("--config", c.config, "key = value settings file");
  train->add_option("--corpus", corpus, "Directory of PGM/PNG images")->required();
  train->add_option("--iterations", iterations, "Override the configured iteration count");

  std::string image;
  auto* describe = app.add_subcommand("describe", "Extract keypoints and descriptors of one image");
  add_common(describe, true);
  describe->add_option("--checkpoint", c.checkpoint)->required();
  describe->add_option("--image", image)->required();

  std::string fa, fb;
  auto* match = app.add_subcommand("match", "Match two feature files");
  add_common(match, true);
  match->add_option("features_a", fa)->required();
  match->add_option("features_b", fb)->required();

  std::string images_dir;
  auto* rotation = app.add_subcommand("eval-rotation", "MMA over a 0-350 degree rotation sweep");
  add_common(rotation, true);
  rotation->add_option("--checkpoint", c.checkpoint)->required();
  rotation->add_option("--images", images_dir, "Directory of images")->required();

  std::string pairs;
  int ransac_iterations = 2000;
  double ransac_threshold = 1.0;
  auto* pose = app.add_subcommand("eval-pose", "Relative pose error over a pair list");
  add_common(pose, true);
  pose->add_option("--checkpoint", c.checkpoint)->required();
  pose->add_option("--pairs", pairs, "Lines: imageA imageB fx fy cx cy [R(9) t(3)]")->required();
  pose->add_option("--ransac-iterations", ransac_iterations);
  pose->add_option("--ransac-threshold", ransac_threshold, "Sampson threshold in pixels");

  std::string sequence;
  auto* track = app.add_subcommand("eval-track", "Tracking-point error over a labeled sequence");
  add_common(track, true);
  track->add_option("--checkpoint", c.checkpoint)->required();
  track->add_option("--sequence", sequence, "Lines: image x1 y1 x2 y2 ...; first line is frame 0")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
  add_common(grad, false);
  auto* self = app.add_subcommand("selftest", "Equivariance and invariance property suites");
  add_common(self, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (gen->parsed()) return cmd_gen_corpus(c, count, size, disk);
    if (train->parsed()) return cmd_train(c, corpus, iterations, train->count("--seed") > 0);
    if (describe->parsed()) return cmd_describe(c, image);
    if (match->parsed()) return cmd_match(c, fa, fb);
    if (rotation->parsed()) return cmd_eval_rotation(c, images_dir);
    if (pose->parsed()) return cmd_eval_pose(c, pairs, ransac_iterations, ransac_threshold);
    if (track->parsed()) return cmd_eval_track(c, sequence);
    if (grad->parsed()) return cmd_gradcheck(c);
    if (self->parsed()) return cmd_selftest(c);
  } catch (const ride::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
