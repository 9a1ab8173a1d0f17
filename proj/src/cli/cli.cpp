#include "dscomp/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dscomp/checkpoint.hpp"
#include "dscomp/conlab.hpp"
#include "dscomp/image_io.hpp"
#include "dscomp/metrics.hpp"
#include "run_config.hpp"

namespace dscomp {

namespace fs = std::filesystem;

namespace {

/// A configuration that cannot describe a valid run.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fresh output directory guarded by a lock file for the lifetime of the command.
class RunDirectory {
 public:
  RunDirectory(const fs::path& root, const std::string& name, bool explicit_name) {
    fs::create_directories(root);
    path_ = root / name;
    if (explicit_name) {
      if (fs::exists(path_)) throw UsageError("run directory " + path_.string() + " already exists");
    } else {
      for (int k = 2; fs::exists(path_); ++k) path_ = root / (name + "-" + std::to_string(k));
    }
    fs::create_directories(path_);
    lock_ = path_ / ".lock";
    const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw IoError("cannot lock run directory " + path_.string());
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunDirectory() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_, lock_;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void echo_config(const RunConfig& cfg, const RunDirectory& run) {
  const auto text = to_json(cfg).dump(2);
  open_out(run / "config.json") << text << '\n';
  std::cout << "effective config:\n" << text << "\nrun directory: " << run.path().string() << std::endl;
}

void check_model(const RunConfig& cfg) {
  try {
    if (cfg.model.kind == BackboneKind::UNet) cfg.model.unet.validate();
    else cfg.model.dit.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (cfg.schedule_steps < 1) throw UsageError("schedule steps must be positive");
}

std::int64_t model_image_size(const ModelSpec& m) {
  return m.kind == BackboneKind::UNet ? m.unet.image_size : m.dit.image_size;
}

int model_max_timestep(const ModelSpec& m) {
  return m.kind == BackboneKind::UNet ? m.unet.max_timestep : m.dit.max_timestep;
}

NoiseSchedule schedule_for(const RunConfig& cfg, const ModelSpec& model) {
  if (cfg.schedule_steps > model_max_timestep(model)) {
    throw UsageError("schedule has " + std::to_string(cfg.schedule_steps) + " steps but the model embeds at most " +
                     std::to_string(model_max_timestep(model)));
  }
  return make_desk_schedule(cfg.schedule_steps);
}

// Generated data follows the model's resolution unless the scene size was set explicitly.
std::vector<CompositionSample> load_data(const RunConfig& cfg, std::int64_t image_size, bool follow_model = false) {
  std::vector<CompositionSample> data;
  if (!cfg.data_dir.empty()) {
    data = read_dataset(cfg.data_dir);
  } else {
    if (cfg.count < 1) throw UsageError("count must be positive");
    auto scene = cfg.scene;
    if (follow_model) scene.size = static_cast<int>(image_size);
    data = generate_dataset(scene, cfg.data_seed, cfg.count);
  }
  if (data.empty()) throw IoError("dataset is empty");
  if (data.front().size() != image_size) {
    throw UsageError("dataset images are " + std::to_string(data.front().size()) + " px but the model expects " +
                     std::to_string(image_size));
  }
  return data;
}

// ---------------------------------------------------------------------------

void cmd_gen(const RunConfig& cfg, const RunDirectory& run) {
  if (cfg.count < 1) throw UsageError("count must be positive");
  const auto samples = generate_dataset(cfg.scene, cfg.data_seed, cfg.count);
  const auto dir = run / "dataset";
  write_dataset(samples, dir);
  if (cfg.augment) {
    fs::create_directories(dir / "augmented");
    auto index = open_out(dir / "augmented" / "augment.jsonl");
    for (const auto& s : samples) {
      const auto img = augment_image(s.ref, s.mask_ref, cfg.augmentation, s.seed);
      const auto mask = augment_mask(img.mask, s.seed, cfg.augmentation);
      write_ppm(dir / "augmented" / (s.id + "_aug.ppm"), img.image);
      write_mask(dir / "augmented" / (s.id + "_aug_mask.pgm"), mask.mask);
      const auto& r = img.record;
      index << nlohmann::json{{"id", s.id},
                              {"flip", r.flipped},
                              {"rotate", r.rotated ? nlohmann::json(r.angle_deg) : nlohmann::json(nullptr)},
                              {"scale", r.scaled ? nlohmann::json(r.scale) : nlohmann::json(nullptr)},
                              {"crop_ratio", r.cropped ? nlohmann::json(r.crop_ratio) : nlohmann::json(nullptr)},
                              {"mask_branch", to_string(mask.branch)}}
                   .dump()
            << '\n';
    }
  }
  std::cout << "wrote " << samples.size() << " samples to " << dir.string() << std::endl;
}

TrainLog train_variant(CompositionModel& model, const std::vector<CompositionSample>& data, const NoiseSchedule& s,
                       const TrainConfig& tc, const std::string& label, std::ostream& csv) {
  const int report_every = std::max(1, tc.steps / 10);
  return train(model, data, s, tc, label, &csv, [&](int step) {
    if (step % report_every == 0) std::cout << label << " step " << step << std::endl;
  });
}

void print_averages(const TrainLog& log, const TrainConfig& tc) {
  if (log.losses.empty()) return;
  const int last = static_cast<int>(log.losses.size());
  std::printf("moving average (window %d): step %d %.5f, step %d %.5f\n", tc.average_window,
              std::min(100, last), log.moving_average(std::min(100, last), tc.average_window), last,
              log.moving_average(last, tc.average_window));
}

void cmd_train(const RunConfig& cfg, const RunDirectory& run) {
  check_model(cfg);
  const auto s = schedule_for(cfg, cfg.model);
  const auto data = load_data(cfg, model_image_size(cfg.model));
  auto model = CompositionModel::build(cfg.model);
  auto csv = open_out(run / "loss.csv");
  const auto log = train_variant(model, data, s, cfg.train, to_string(cfg.model.variant), csv);
  save_checkpoint(run / "model.ckpt", model,
                  {{"steps", std::to_string(cfg.train.steps)}, {"run", run.path().filename().string()}});
  print_averages(log, cfg.train);
  std::cout << "checkpoint: " << (run / "model.ckpt").string() << std::endl;
}

CompositionModel load_model(const std::string& path, CheckpointInfo* info = nullptr) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(path, info);
}

void cmd_sample(const RunConfig& cfg, const RunDirectory& run) {
  auto model = load_model(cfg.checkpoint);
  const auto s = schedule_for(cfg, model.spec());
  if (cfg.sample_steps < 1 || cfg.sample_steps > s.steps) {
    throw UsageError("sample steps must lie in [1, " + std::to_string(s.steps) + "]");
  }
  const auto data = load_data(cfg, model.image_size(), !cfg.scene_size_set);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.sample_count, 0)), data.size());
  fs::create_directories(run / "samples");
  auto csv = open_out(run / "samples.csv");
  csv << "id,background_preserved,psnr,ssim\n";
  std::mt19937_64 rng(cfg.sample_seed);
  int violations = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sample = data[i];
    const auto req = InpaintRequest::from(sample);
    const auto out = to_pixels(inpaint_sample(req, model, s, cfg.sample_steps, rng));
    const bool preserved = apply_mask(out, req.mask_bg) == req.masked_bg;
    violations += !preserved;
    write_ppm(run / "samples" / (sample.id + "_out.ppm"), out);
    write_ppm(run / "samples" / (sample.id + "_gt.ppm"), sample.gt);
    csv << sample.id << ',' << (preserved ? 1 : 0) << ',' << format_db(psnr(out, sample.gt)) << ','
        << ssim(out, sample.gt).value << '\n';
    std::cout << "sampled " << sample.id << (preserved ? "" : " (background NOT preserved)") << std::endl;
  }
  if (violations) throw NumericalError(std::to_string(violations) + " samples changed the known background");
}

void cmd_ablate(const RunConfig& cfg, const RunDirectory& run) {
  check_model(cfg);
  const auto s = schedule_for(cfg, cfg.model);
  const auto data = load_data(cfg, model_image_size(cfg.model));
  auto csv = open_out(run / "loss.csv");
  const auto draws = make_draws(data, s, cfg.draws, cfg.eval_seed);
  auto profile = open_out(run / "l2_profile.csv");
  profile << "layer,variant,metric,value\n";
  nlohmann::json summary;
  bool header = true;
  for (auto variant : {Variant::Shared, Variant::DualFrozen, Variant::DualTrainable}) {
    auto spec = cfg.model;
    spec.variant = variant;
    auto model = CompositionModel::build(spec);
    const auto label = to_string(variant);
    std::ostringstream rows;
    const auto log = train_variant(model, data, s, cfg.train, label, rows);
    // One header for the combined loss log.
    auto text = rows.str();
    if (!header) text.erase(0, text.find('\n') + 1);
    header = false;
    csv << text;
    save_checkpoint(run / (label + ".ckpt"), model, {{"steps", std::to_string(cfg.train.steps)}});
    print_averages(log, cfg.train);
    double avg = 0;
    const auto curve = mean_layer_l2(model, data, draws, s);
    for (const auto& v : curve) {
      profile << v.layer << ',' << label << ",l2," << v.value << '\n';
      avg += v.value;
    }
    summary[label] = {{"layer_mean_l2", avg / double(curve.size())},
                      {"final_moving_average", log.losses.empty() ? 0.0 : log.moving_average(int(log.losses.size()))}};
  }
  open_out(run / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << std::endl;
}

void cmd_conlab(const RunConfig& cfg, const RunDirectory& run) {
  CheckpointInfo info;
  auto model = load_model(cfg.checkpoint, &info);
  const auto s = schedule_for(cfg, model.spec());
  const auto data = load_data(cfg, model.image_size(), !cfg.scene_size_set);
  if (cfg.draws < 1) throw UsageError("draws must be positive");
  const auto draws = make_draws(data, s, cfg.draws, cfg.eval_seed);

  ConsistencyReport report;
  report.metadata = {{"checkpoint", cfg.checkpoint},
                     {"variant", to_string(model.spec().variant)},
                     {"samples", std::to_string(data.size())},
                     {"draws", std::to_string(draws.size())},
                     {"seed", std::to_string(cfg.eval_seed)}};
  for (const auto& d : draws) report.merging_samples.push_back(region_merging_loss(model, data[d.sample], d.t, d.eps, s));
  report.mean_training_loss = mean_denoising_loss(model, data, draws, s);
  report.cosine = mean_cosine(model, data, draws, s);
  report.l2[to_string(model.spec().variant)] = mean_layer_l2(model, data, draws, s);
  for (const auto& path : {cfg.frozen_checkpoint, cfg.dual_checkpoint}) {
    if (path.empty()) continue;
    if (!fs::exists(path)) {
      std::cerr << "warning: checkpoint " << path << " not found; its curve is omitted" << std::endl;
      report.metadata["missing:" + path] = "omitted";
      continue;
    }
    auto other = load_checkpoint(path);
    report.l2[to_string(other.spec().variant)] = mean_layer_l2(other, data, draws, s);
  }
  report.validate();
  auto csv = open_out(run / "report.csv");
  write_report_csv(csv, report);
  auto json = open_out(run / "report.json");
  write_report_json(json, report);
  std::printf("region merging %.5g vs training loss %.5g (ratio %.3f)\n", report.mean_merging_loss(),
              report.mean_training_loss, report.mean_merging_loss() / report.mean_training_loss);
  for (const auto& c : report.cosine) std::printf("cosine %s %.4f\n", c.layer.c_str(), c.value);
}

void cmd_curate(const RunConfig& cfg, const RunDirectory& run) {
  if (cfg.frames_dir.empty()) throw UsageError("--frames is required");
  auto frames = read_frame_index(cfg.frames_dir, cfg.frames_index);
  const auto result = build_pairs(std::move(frames), recorded_hooks(), cfg.thresholds);
  auto out = open_out(run / "pairs.jsonl");
  write_pair_manifest(out, result);
  const auto& st = result.stats;
  const nlohmann::json stats = {{"frames", st.frames},
                                {"blurry", st.blurry},
                                {"detections", st.detections},
                                {"rejected_by_verifier", st.rejected_by_verifier},
                                {"rejected_by_mask", st.rejected_by_mask},
                                {"clusters", st.clusters},
                                {"singleton_clusters", st.singleton_clusters},
                                {"pairs", st.pairs}};
  open_out(run / "curation_stats.json") << stats.dump(2) << '\n';
  std::cout << stats.dump(2) << std::endl;
}

Tensor32 read_image(const fs::path& p) { return p.extension() == ".pgm" ? read_pgm(p) : read_ppm(p); }

void cmd_metrics(const RunConfig& cfg, const RunDirectory& run) {
  if (cfg.outputs_dir.empty() || cfg.gt_dir.empty()) throw UsageError("--outputs and --gt are required");
  std::vector<fs::path> outputs;
  for (const auto& e : fs::directory_iterator(cfg.outputs_dir)) {
    const auto ext = e.path().extension();
    if (ext == ".ppm" || ext == ".pgm") outputs.push_back(e.path());
  }
  std::sort(outputs.begin(), outputs.end());
  std::vector<fs::path> chosen;
  std::vector<fs::path> truths;
  for (const auto& o : outputs) {
    const auto stem = o.stem().string();
    if (stem.size() > 3 && stem.compare(stem.size() - 3, 3, "_gt") == 0) continue;  // ground truth copies
    auto gt = fs::path(cfg.gt_dir) / o.filename();
    if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, "_out") == 0) {
      gt = fs::path(cfg.gt_dir) / (stem.substr(0, stem.size() - 4) + "_gt" + o.extension().string());
    }
    if (fs::equivalent(o.parent_path(), cfg.gt_dir) && gt == o) continue;
    if (!fs::exists(gt)) throw IoError("no ground truth for " + o.string() + " (looked for " + gt.string() + ")");
    chosen.push_back(o);
    truths.push_back(gt);
  }
  if (chosen.empty()) throw IoError("no output images in " + cfg.outputs_dir);
  auto csv = open_out(run / "metrics.csv");
  csv << "name,psnr,ssim,ssim_global_fallback\n";
  double psnr_sum = 0, ssim_sum = 0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto a = read_image(chosen[i]), b = read_image(truths[i]);
    const double p = psnr(a, b);
    const auto q = ssim(a, b);
    psnr_sum += p;
    ssim_sum += q.value;
    csv << chosen[i].filename().string() << ',' << format_db(p) << ',' << q.value << ',' << (q.global_fallback ? 1 : 0)
        << '\n';
  }
  const double n = double(chosen.size());
  csv << "mean," << format_db(psnr_sum / n) << ',' << ssim_sum / n << ",\n";
  std::printf("%zu pairs: mean PSNR %s dB, mean SSIM %.4f\n", chosen.size(), format_db(psnr_sum / n).c_str(),
              ssim_sum / n);
}

std::optional<std::string> find_config_flag(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  RunConfig cfg;
  try {
    from_json(nlohmann::json::parse(in), cfg);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return cfg;
}

// Flags shared by the commands that build or load a model and its data.
void add_model_flags(CLI::App* c, RunConfig& cfg, std::string& backbone, std::string& variant) {
  c->add_option("--backbone", backbone, "unet or dit");
  c->add_option("--variant", variant, "shared, dual_frozen or dual_trainable");
  c->add_option("--model-seed", cfg.model.seed, "initialization seed");
  c->add_option("--depth", cfg.model.unet.depth, "U-Net interaction blocks");
  c->add_option("--dit-depth", cfg.model.dit.depth, "DiT blocks");
  c->add_option("--patch", cfg.model.dit.patch, "DiT patch size");
}

void add_data_flags(CLI::App* c, RunConfig& cfg) {
  c->add_option("--data", cfg.data_dir, "dataset directory written by gen");
  c->add_option("--data-seed", cfg.data_seed, "seed of the generated dataset when --data is absent");
  c->add_option("--count", cfg.count, "generated dataset size when --data is absent");
  c->add_option("--image-size", cfg.scene.size, "image side in pixels");
  c->add_option("--schedule-steps", cfg.schedule_steps, "diffusion steps");
}

void add_train_flags(CLI::App* c, RunConfig& cfg) {
  c->add_option("--steps", cfg.train.steps, "optimizer steps");
  c->add_option("--batch", cfg.train.batch, "batch size");
  c->add_option("--lr", cfg.train.lr, "learning rate");
  c->add_option("--seed", cfg.train.seed, "training seed");
}

int run_checked(int argc, char** argv) {
  RunConfig cfg;
  if (const auto path = find_config_flag(argc, argv)) cfg = load_config_file(*path);

  CLI::App app{"Reference-guided composition diffusion at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  // The run name never comes from a config file, so an echoed config can be replayed.
  std::string config_path, runs_root, run_name;
  if (const char* env = std::getenv("DSCOMP_RUNS_ROOT")) runs_root = env;
  else runs_root = "runs";
  app.add_option("--config", config_path, "JSON run config; flags override its values");
  app.add_option("--name", run_name, "run directory name (must not exist)");
  app.add_option("--runs-root", runs_root, "where run directories are created (env DSCOMP_RUNS_ROOT)");

  std::string backbone = to_string(cfg.model.kind), variant = to_string(cfg.model.variant);

  auto* gen = app.add_subcommand("gen", "generate a synthetic composition dataset");
  gen->add_option("--seed", cfg.data_seed, "first scene seed");
  gen->add_option("--count", cfg.count, "number of scenes");
  gen->add_option("--image-size", cfg.scene.size, "image side in pixels");
  gen->add_flag("--augment", cfg.augment, "also write one augmented copy of each reference object and its mask");

  auto* tr = app.add_subcommand("train", "train one variant; writes a checkpoint and a loss CSV");
  add_model_flags(tr, cfg, backbone, variant);
  add_data_flags(tr, cfg);
  add_train_flags(tr, cfg);

  auto* sa = app.add_subcommand("sample", "inpaint dataset samples with a trained checkpoint");
  sa->add_option("--checkpoint", cfg.checkpoint, "model checkpoint")->required();
  add_data_flags(sa, cfg);
  sa->add_option("--samples", cfg.sample_count, "number of samples to inpaint");
  sa->add_option("--sample-steps", cfg.sample_steps, "sampler steps");
  sa->add_option("--seed", cfg.sample_seed, "sampler seed");

  auto* ab = app.add_subcommand("ablate", "train all three variants and profile layer l2 to ground truth");
  add_model_flags(ab, cfg, backbone, variant);
  add_data_flags(ab, cfg);
  add_train_flags(ab, cfg);
  ab->add_option("--draws", cfg.draws, "evaluation draws");
  ab->add_option("--eval-seed", cfg.eval_seed, "evaluation seed");

  auto* cl = app.add_subcommand("conlab", "feature-consistency report for a trained checkpoint");
  cl->add_option("--checkpoint", cfg.checkpoint, "checkpoint under study")->required();
  cl->add_option("--frozen", cfg.frozen_checkpoint, "dual frozen checkpoint for l2 curves");
  cl->add_option("--dual", cfg.dual_checkpoint, "dual trainable checkpoint for l2 curves");
  add_data_flags(cl, cfg);
  cl->add_option("--draws", cfg.draws, "evaluation draws");
  cl->add_option("--eval-seed", cfg.eval_seed, "evaluation seed");

  auto* cu = app.add_subcommand("curate", "pair manifest from an indexed frame directory");
  cu->add_option("--frames", cfg.frames_dir, "frame directory")->required();
  cu->add_option("--index", cfg.frames_index, "JSON-lines frame index inside the directory");
  cu->add_option("--min-sobel", cfg.thresholds.min_sobel_var, "Sobel variance threshold");
  cu->add_option("--min-laplacian", cfg.thresholds.min_laplacian_var, "Laplacian variance threshold");
  cu->add_option("--min-component", cfg.thresholds.min_component_ratio, "largest-component ratio threshold");
  cu->add_option("--cluster-cosine", cfg.thresholds.cluster_cosine, "single-linkage cosine threshold");

  auto* me = app.add_subcommand("metrics", "PSNR/SSIM over paired output and ground-truth images");
  me->add_option("--outputs", cfg.outputs_dir, "directory of outputs")->required();
  me->add_option("--gt", cfg.gt_dir, "directory of ground truth")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  auto* cmd = app.get_subcommands().front();
  for (auto* sub : app.get_subcommands())
    if (auto* opt = sub->get_option_no_throw("--image-size"); opt && opt->count() > 0) cfg.scene_size_set = true;
  cfg.command = cmd->get_name();
  try {
    cfg.model.kind = parse_backbone(backbone);
    cfg.model.variant = parse_variant(variant);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfg.model.unet.image_size = cfg.model.dit.image_size = cfg.scene.size;
  if (run_name.empty()) {
    cfg.run_name = cfg.command + "-" + timestamp();
  } else {
    cfg.run_name = run_name;
  }

  RunDirectory run(runs_root, cfg.run_name, !run_name.empty());
  cfg.run_name = run.path().filename().string();
  echo_config(cfg, run);
  if (cmd == gen) cmd_gen(cfg, run);
  else if (cmd == tr) cmd_train(cfg, run);
  else if (cmd == sa) cmd_sample(cfg, run);
  else if (cmd == ab) cmd_ablate(cfg, run);
  else if (cmd == cl) cmd_conlab(cfg, run);
  else if (cmd == cu) cmd_curate(cfg, run);
  else if (cmd == me) cmd_metrics(cfg, run);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  try {
    return run_checked(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << std::endl;
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitData;
  }
}

}  // namespace dscomp
