#pragma once

// Command-line front end. Exit codes: 0 success, 2 input error, 3 non-finite
// loss during training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ahgs/checkpoint.hpp"
#include "ahgs/config.hpp"
#include "ahgs/evaluate.hpp"
#include "ahgs/spectrum.hpp"
#include "ahgs/synthetic.hpp"
#include "ahgs/trainer.hpp"

namespace ahgs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNonFinite = 3;

inline std::string checkpoint_name(std::size_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "checkpoint_%06zu.ahgs", iteration);
  return buf;
}

inline std::string render_name(std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "render_%03zu.ppm", i);
  return buf;
}

/// Milestones at 50% and 100% of training.
inline std::vector<std::size_t> milestones(std::size_t total) {
  std::vector<std::size_t> m;
  if (total / 2 > 0 && total / 2 < total) m.push_back(total / 2);
  m.push_back(total);
  return m;
}

inline int cmd_train(const std::filesystem::path& config_path, const std::filesystem::path& data,
                     const std::filesystem::path& out, std::ostream& log) {
  const TrainConfig cfg = load_config(config_path);
  const PointCloud cloud = load_pointcloud(data / kPointsFile);
  const ViewSet views = load_views(data, kCamerasFile);
  std::filesystem::create_directories(out);
  Trainer trainer(cfg, cloud, views.cameras, views.images, make_feature_extractor(cfg));
  StatsLog stats(out / "stats.csv");
  const auto marks = milestones(cfg.total_iterations);
  while (!trainer.done()) {
    IterationStats s;
    try {
      s = trainer.step();
    } catch (const NumericError& e) {
      save_checkpoint(out / "last_good.ahgs", trainer.checkpoint());
      log << "error: " << e.what() << " (last good state saved to " << (out / "last_good.ahgs").string() << ")\n";
      return kExitNonFinite;
    }
    stats.write(s);
    if (std::find(marks.begin(), marks.end(), trainer.iteration()) != marks.end()) {
      save_checkpoint(out / checkpoint_name(trainer.iteration()), trainer.checkpoint());
    }
  }
  log << "trained " << cfg.total_iterations << " iterations, " << trainer.model().anchors.size() << " anchors\n";
  return kExitOk;
}

inline int cmd_render(const std::filesystem::path& ckpt, const std::filesystem::path& cameras,
                      const std::filesystem::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto cams = read_cameras(cameras);
  std::filesystem::create_directories(out);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    cams[i].validate();
    write_ppm(out / render_name(i), render_image(ck.model, cams[i]));
  }
  return kExitOk;
}

inline int cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data, const std::string& split,
                    const std::string& csv_path, double cutoff, std::ostream& out) {
  std::string file;
  if (split == "train") file = kCamerasFile;
  else if (split == "test") file = kTestCamerasFile;
  else file = std::filesystem::exists(data / kTestCamerasFile) ? kTestCamerasFile : kCamerasFile;
  const Checkpoint ck = load_checkpoint(ckpt);
  const ViewSet views = load_views(data, file);
  const EvalTable table = evaluate(ck.model, views.cameras, views.images, cutoff);
  const std::string csv = table.to_csv();
  out << csv;
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw LoadError("cannot write " + csv_path);
    f << csv;
  }
  return kExitOk;
}

inline int cmd_spectrum(const std::filesystem::path& image, double cutoff, const std::string& out_ppm,
                        std::ostream& out) {
  const SpectrumReport r = spectrum(read_ppm(image), cutoff);
  char buf[64];
  std::snprintf(buf, sizeof buf, "hf_ratio %.6f\n", r.hf_ratio);
  out << buf;
  if (!out_ppm.empty()) write_ppm(out_ppm, r.to_image());
  return kExitOk;
}

inline int cmd_make_synthetic(const SyntheticSceneSpec& spec, const std::filesystem::path& out) {
  write_synthetic(make_synthetic(spec), out);
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Anchor-based neural Gaussian splatting with frequency-aware encodings"};
  app.require_subcommand(1);

  std::string config, data, outdir, ckpt, cameras, split = "auto", csv, image, spectrum_out, kind = "tri-gaussian";
  double cutoff = kDefaultCutoff;
  SyntheticSceneSpec spec;

  auto* train = app.add_subcommand("train", "Train a scene from a dataset directory");
  train->add_option("--config", config, "Training config file")->required();
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", outdir, "Output directory")->required();

  auto* render = app.add_subcommand("render", "Render a checkpoint from a camera file");
  render->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  render->add_option("--cameras", cameras, "Camera JSON file")->required();
  render->add_option("--out", outdir, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Score a checkpoint against a dataset's images");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--split", split, "auto, train or test")->check(CLI::IsMember({"auto", "train", "test"}));
  eval->add_option("--csv", csv, "Also write the table here");
  eval->add_option("--cutoff", cutoff, "High-frequency cutoff as a fraction of Nyquist");

  auto* spec_cmd = app.add_subcommand("spectrum", "High-frequency energy ratio of a PPM image");
  spec_cmd->add_option("--image", image, "PPM image")->required();
  spec_cmd->add_option("--cutoff", cutoff, "Cutoff radius as a fraction of Nyquist");
  spec_cmd->add_option("--out", spectrum_out, "Write the log-magnitude spectrum as PPM");

  auto* synth = app.add_subcommand("make-synthetic", "Write a synthetic ground-truth dataset");
  synth->add_option("--kind", kind, "tri-gaussian, checker-plane or textured-sphere")
      ->check(CLI::IsMember({"tri-gaussian", "checker-plane", "textured-sphere"}));
  synth->add_option("--cameras", spec.cameras, "Training camera count");
  synth->add_option("--size", spec.size, "Image width and height in pixels");
  synth->add_option("--seed", spec.seed, "Point sampling seed");
  synth->add_option("--out", outdir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    }
    return kExitInput;
  }

  try {
    if (*train) return cmd_train(config, data, outdir, err);
    if (*render) return cmd_render(ckpt, cameras, outdir);
    if (*eval) return cmd_eval(ckpt, data, split, csv, cutoff, out);
    if (*spec_cmd) return cmd_spectrum(image, cutoff, spectrum_out, out);
    if (*synth) {
      spec.kind = parse_synthetic_kind(kind);
      return cmd_make_synthetic(spec, outdir);
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace ahgs::cli
