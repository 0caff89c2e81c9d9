// mlsm: multi-level similarity model toolkit.
// Subcommands stage the pipeline explicitly (prepare -> train-localizer ->
// localize -> train -> eval/ablation) because the crop cache is expensive and
// shared across training runs.

#include "mlsm/config.hpp"
#include "mlsm/engine.hpp"

#include <CLI11.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mlsm;

namespace {

using Real = float;  // production scalar; tests also instantiate double

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::int64_t seed = -1;  // -1: not passed
  int workers = 1;
  bool deterministic = false;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& c, bool with_out = true) {
  cmd->add_option("--config", c.config_path, "Config file (flat dotted keys)");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set train.lr0=0.001");
  cmd->add_option("--seed", c.seed, "Master seed override");
  cmd->add_option("--workers", c.workers, "Worker/thread cap")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", c.deterministic, "Single-worker deterministic mode");
  if (with_out) cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_flag("--force", c.force, "Allow writing into a non-empty output directory");
}

Config load_config(const CommonOpts& c) {
  Config cfg = c.config_path.empty() ? Config() : Config::from_file(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  return cfg;
}

void apply_threading(const CommonOpts& c) {
  const int n = c.deterministic ? 1 : std::max(1, c.workers);
  Eigen::setNbThreads(n);
}

int effective_workers(const CommonOpts& c) { return c.deterministic ? 1 : std::max(1, c.workers); }

void ensure_out_dir(const std::string& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out))
    throw ConfigError("output path exists and is not a directory: " + out);
  if (fs::is_directory(out) && !fs::is_empty(out) && !force)
    throw ConfigError("output directory is not empty: " + out + " (pass --force to reuse it)");
  fs::create_directories(out);
}

SplitFractions parse_fractions(const std::string& s) {
  SplitFractions f;
  if (s.empty()) return f;
  std::istringstream in(s);
  char comma;
  if (!(in >> f.base >> comma >> f.val >> comma >> f.novel))
    throw ConfigError("data.split_fracs must be three comma-separated numbers, got: " + s);
  return f;
}

std::vector<std::string> scan_images(const std::string& root) {
  if (!fs::is_directory(root)) throw ConfigError("image directory not found: " + root);
  std::vector<std::string> rels;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".jpg" || ext == ".jpeg")
      rels.push_back(fs::relative(e.path(), root).string());
  }
  std::sort(rels.begin(), rels.end());
  if (rels.empty()) throw ConfigError("no images found under " + root);
  return rels;
}

std::string top_dir_of(const std::string& rel) {
  const auto slash = rel.find('/');
  return slash == std::string::npos ? std::string() : rel.substr(0, slash);
}

DatasetIndex load_index_checked(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "index.tsv"))
    throw ConfigError("no index.tsv under " + dir + "; run `mlsm prepare` first");
  return load_index(dir);
}

ModelConfig model_config_from(const Config& cfg) {
  ModelConfig m;
  m.channels = static_cast<int>(cfg.get_int("model.channels", 64));
  m.dim = static_cast<int>(cfg.get_int("model.dim", 64));
  m.head_hidden = static_cast<int>(cfg.get_int("model.head_hidden", 8));
  m.image_size = static_cast<int>(cfg.get_int("data.image_size", 84));
  m.ablation = parse_ablation(cfg.get_str("model.ablation", "I+G+O"));
  m.loss = parse_loss(cfg.get_str("model.loss", "mse"));
  return m;
}

/// Locate params.bin under a checkpoint argument: the directory itself, its
/// ckpt_best, or its ckpt_last (in that order).
std::string resolve_checkpoint_dir(const std::string& arg) {
  for (const fs::path candidate :
       {fs::path(arg), fs::path(arg) / "ckpt_best", fs::path(arg) / "ckpt_last"})
    if (fs::exists(candidate / "params.bin")) return candidate.string();
  throw ConfigError("no checkpoint found at " + arg +
                    " (looked for params.bin, ckpt_best/, ckpt_last/)");
}

// ---------------------------------------------------------------------------

int cmd_prepare(const CommonOpts& common, const std::string& root_flag) {
  Config cfg = load_config(common);
  if (!root_flag.empty()) cfg.set("data.root", root_flag);
  const std::string root = cfg.require_str("data.root");
  if (!fs::is_directory(root))
    throw ConfigError("dataset root is not a readable directory: " + root);
  const auto seed = static_cast<std::uint64_t>(
      common.seed >= 0 ? common.seed : cfg.get_int("data.split_seed", 0));
  const int image_size = static_cast<int>(cfg.get_int("data.image_size", 84));
  const SplitFractions fracs = parse_fractions(cfg.get_str("data.split_fracs", ""));

  // prepare is idempotent for the same inputs and may rewrite its own output
  fs::create_directories(common.out);
  DatasetIndex index = build_index(root, seed, fracs, image_size);
  save_index(index, common.out);

  cfg.set("data.split_seed", std::to_string(seed));
  cfg.set("data.image_size", std::to_string(image_size));
  cfg.save((fs::path(common.out) / "config_resolved.txt").string());
  std::cout << "indexed " << index.entries.size() << " images in " << index.num_classes()
            << " classes\n";
  std::cout << "base=" << index.count_of(Split::Base) << " val=" << index.count_of(Split::Val)
            << " novel=" << index.count_of(Split::Novel) << "\n";
  return 0;
}

int cmd_train_localizer(const CommonOpts& common, const std::string& index_dir) {
  Config cfg = load_config(common);
  apply_threading(common);
  DatasetIndex index = load_index_checked(index_dir);
  const int image_size = static_cast<int>(cfg.get_int("data.image_size", 84));
  ImageStore store = ImageStore::for_index(index, image_size);

  LocalizerTrainConfig lc;
  lc.steps = static_cast<int>(cfg.get_int("localizer.steps", 3000));
  lc.batch_size = static_cast<int>(cfg.get_int("localizer.batch", 32));
  lc.lr = cfg.get_double("localizer.lr", 1e-3);
  lc.channels = static_cast<int>(cfg.get_int("model.channels", 64));
  lc.image_size = image_size;
  lc.seed = static_cast<std::uint64_t>(common.seed >= 0 ? common.seed
                                                        : cfg.get_int("localizer.seed", 0));
  lc.log_every = std::max(1, lc.steps / 10);

  ensure_out_dir(common.out, common.force);
  auto result = train_base_classifier<Real>(index, store, lc, &std::cout);
  save_classifier(common.out, result.classifier);
  cfg.save((fs::path(common.out) / "config_resolved.txt").string());
  std::cout << "final training loss " << result.final_loss << "\n";
  std::cout << "classifier checkpoint written to " << common.out << "\n";
  return 0;
}

int cmd_localize(const CommonOpts& common, const std::string& checkpoint,
                 const std::string& images, double threshold, bool overlay) {
  Config cfg = load_config(common);
  apply_threading(common);
  BaseClassifier<Real> clf = load_classifier<Real>(checkpoint);

  std::vector<std::string> rels = scan_images(images);
  std::vector<int> logit_idx;
  logit_idx.reserve(rels.size());
  for (const auto& rel : rels) logit_idx.push_back(clf.logit_of(top_dir_of(rel)));

  LocalizeOptions opts;
  opts.threshold = static_cast<float>(
      threshold > 0 ? threshold : cfg.get_double("localizer.threshold", 0.2));
  require(opts.threshold > 0 && opts.threshold < 1, "threshold must be in (0, 1)");
  opts.overlay = overlay;
  opts.workers = effective_workers(common);
  opts.force = common.force;

  fs::create_directories(common.out);
  const int n = build_crop_cache(clf, rels, logit_idx, images, common.out, clf.norm_mean,
                                 clf.norm_std, opts, &std::cout);
  int known = 0;
  for (int idx : logit_idx) known += idx >= 0 ? 1 : 0;
  std::cout << "object crops for " << rels.size() << " images (" << n << " new, "
            << (rels.size() - static_cast<std::size_t>(known))
            << " via closest-class fallback)\n";
  return 0;
}

int cmd_overlay(const CommonOpts& common, const std::string& checkpoint,
                const std::string& images) {
  apply_threading(common);
  BaseClassifier<Real> clf = load_classifier<Real>(checkpoint);
  std::vector<std::string> rels = scan_images(images);
  ensure_out_dir(common.out, common.force);
  for (const auto& rel : rels) {
    TensorF pixels = load_image((fs::path(images) / rel).string(), clf.image_size);
    Tensor<Real> input(1, clf.image_size, clf.image_size, 3);
    for (int c = 0; c < 3; ++c)
      input.data.col(c) =
          (pixels.data.col(c).array() - clf.norm_mean[static_cast<std::size_t>(c)]) /
          clf.norm_std[static_cast<std::size_t>(c)];
    int cls = clf.logit_of(top_dir_of(rel));
    if (cls < 0) cls = pick_class_for_novel(clf, input);
    Heatmap heat = gradcam(clf, input, cls);
    const fs::path out_path = fs::path(common.out) / (rel + ".ppm");
    fs::create_directories(out_path.parent_path());
    save_ppm(out_path.string(), render_overlay(pixels, heat));
  }
  std::cout << "wrote " << rels.size() << " overlay composites to " << common.out << "\n";
  return 0;
}

struct EpisodeFlagOpts {
  std::int64_t way = -1, shot = -1, queries = -1, episodes = -1;
};

void add_episode_flags(CLI::App* cmd, EpisodeFlagOpts& e) {
  cmd->add_option("--way", e.way, "Classes per episode");
  cmd->add_option("--shot", e.shot, "Support samples per class");
  cmd->add_option("--queries", e.queries, "Total query images per episode");
  cmd->add_option("--episodes", e.episodes, "Episode count");
}

int cmd_train(const CommonOpts& common, const std::string& index_dir, const std::string& crops_dir,
              const std::string& ablation_flag, const EpisodeFlagOpts& ep, bool resume,
              bool lenient_crops) {
  Config cfg = load_config(common);
  apply_threading(common);
  if (!ablation_flag.empty()) cfg.set("model.ablation", ablation_flag);
  if (ep.way >= 0) cfg.set("train.way", std::to_string(ep.way));
  if (ep.shot >= 0) cfg.set("train.shot", std::to_string(ep.shot));
  if (ep.queries >= 0) cfg.set("train.queries", std::to_string(ep.queries));
  if (ep.episodes >= 0) cfg.set("train.episodes", std::to_string(ep.episodes));
  if (common.seed >= 0) cfg.set("train.seed", std::to_string(common.seed));

  DatasetIndex index = load_index_checked(index_dir);
  ModelConfig mc = model_config_from(cfg);
  ImageStore store = ImageStore::for_index(index, mc.image_size);

  std::unique_ptr<CropSource> crops;
  if (mc.ablation == Ablation::IGO) {
    if (crops_dir.empty())
      throw ConfigError("I+G+O training needs --crops <dir> from `mlsm localize`");
    CropCacheMeta meta;
    if (load_cache_meta(crops_dir, &meta))
      require(meta.image_size == mc.image_size,
              "crop cache image size " + std::to_string(meta.image_size) +
                  " does not match data.image_size " + std::to_string(mc.image_size));
    else if (!lenient_crops)
      throw ConfigError("no crop cache at " + crops_dir + "; run `mlsm localize` first");
    crops = std::make_unique<CropSource>(crops_dir, index.norm_mean, index.norm_std, &store,
                                         !lenient_crops);
  }

  TrainConfig tc;
  tc.c_way = static_cast<int>(cfg.get_int("train.way", 5));
  tc.k_shot = static_cast<int>(cfg.get_int("train.shot", 1));
  tc.n_query = static_cast<int>(cfg.get_int("train.queries", 15 * tc.c_way));
  tc.max_episodes = cfg.get_int("train.episodes", 100000);
  tc.lr0 = cfg.get_double("train.lr0", 0.001);
  tc.lr_half_period = cfg.get_int("train.lr_half_period", 100000);
  tc.eval_interval = cfg.get_int("train.eval_interval", 1000);
  tc.val_episodes = static_cast<int>(cfg.get_int("train.val_episodes", 100));
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  tc.validate();

  MlsmModel<Real> model(mc, tc.seed);
  nn::Adam<Real> adam;
  adam.reset(model.param_refs());
  long start_episode = 0;
  if (resume) {
    const std::string last = (fs::path(common.out) / "ckpt_last").string();
    CheckpointMeta meta = load_checkpoint(last, model, &adam);
    start_episode = meta.episode;
    std::cout << "resuming from episode " << start_episode << "\n";
  } else {
    ensure_out_dir(common.out, common.force);
  }

  cfg.set("model.ablation", to_string(mc.ablation));
  cfg.set("model.fingerprint", mc.fingerprint());
  cfg.save((fs::path(common.out) / "config_resolved.txt").string());

  TrainResult res = train_model(model, adam, index, store, crops.get(), tc, common.out,
                                start_episode, &std::cout);
  std::cout << "trained " << res.episodes_run << " episodes, final loss " << res.final_loss
            << ", best val acc " << res.best_val_acc << "\n";
  std::cout << "checkpoints: " << res.last_checkpoint;
  if (!res.best_checkpoint.empty()) std::cout << " (best: " << res.best_checkpoint << ")";
  std::cout << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& checkpoint, const std::string& index_dir,
             const std::string& crops_dir, const std::string& split_name,
             const EpisodeFlagOpts& ep, bool lenient_crops) {
  Config cfg = load_config(common);
  apply_threading(common);
  const std::string ckpt_dir = resolve_checkpoint_dir(checkpoint);
  const std::string fp = peek_fingerprint((fs::path(ckpt_dir) / "params.bin").string());
  ModelConfig mc = parse_fingerprint(fp);
  require(mc.scalar_name == "f32", "checkpoint scalar " + mc.scalar_name + " not supported here");

  MlsmModel<Real> model(mc, 0);
  load_checkpoint(ckpt_dir, model, static_cast<nn::Adam<Real>*>(nullptr));

  DatasetIndex index = load_index_checked(index_dir);
  ImageStore store = ImageStore::for_index(index, mc.image_size);
  std::unique_ptr<CropSource> crops;
  if (mc.ablation == Ablation::IGO) {
    if (crops_dir.empty())
      throw ConfigError("I+G+O evaluation needs --crops <dir> from `mlsm localize`");
    crops = std::make_unique<CropSource>(crops_dir, index.norm_mean, index.norm_std, &store,
                                         !lenient_crops);
  }

  EvalOptions opts;
  opts.split = parse_split(!split_name.empty() ? split_name : cfg.get_str("eval.split", "novel"));
  opts.n_episodes =
      static_cast<int>(ep.episodes >= 0 ? ep.episodes : cfg.get_int("eval.episodes", 100));
  opts.c_way = static_cast<int>(ep.way >= 0 ? ep.way : cfg.get_int("eval.way", 5));
  opts.k_shot = static_cast<int>(ep.shot >= 0 ? ep.shot : cfg.get_int("eval.shot", 1));
  opts.n_query = static_cast<int>(ep.queries >= 0 ? ep.queries : cfg.get_int("eval.queries", 200));
  opts.seed =
      static_cast<std::uint64_t>(common.seed >= 0 ? common.seed : cfg.get_int("eval.seed", 0));

  ensure_out_dir(common.out, common.force);
  EvalReport report = evaluate_model(model, index, store, crops.get(), opts);
  const std::string report_path = (fs::path(common.out) / "eval_report.txt").string();
  report.save(report_path);
  cfg.set("eval.checkpoint", ckpt_dir);
  cfg.save((fs::path(common.out) / "config_resolved.txt").string());
  std::cout << "split " << report.split << " " << opts.c_way << "-way " << opts.k_shot
            << "-shot over " << report.n_episodes << " episodes: acc " << std::fixed
            << std::setprecision(4) << report.mean_acc << " +- " << report.ci95 << "\n";
  std::cout << "report written to " << report_path << "\n";
  return 0;
}

int cmd_ablation(const CommonOpts& common, const std::string& ckpt_i, const std::string& ckpt_ig,
                 const std::string& ckpt_igo, const std::string& index_dir,
                 const std::string& crops_dir, const std::string& split_name,
                 const EpisodeFlagOpts& ep, bool lenient_crops) {
  Config cfg = load_config(common);
  apply_threading(common);
  DatasetIndex index = load_index_checked(index_dir);

  const auto master_seed =
      static_cast<std::uint64_t>(common.seed >= 0 ? common.seed : cfg.get_int("eval.seed", 0));
  ensure_out_dir(common.out, common.force);

  std::vector<AblationCell> cells;
  const std::pair<Ablation, std::string> runs[] = {
      {Ablation::I, ckpt_i}, {Ablation::IG, ckpt_ig}, {Ablation::IGO, ckpt_igo}};
  for (const auto& [mode, ckpt_arg] : runs) {
    const std::string ckpt_dir = resolve_checkpoint_dir(ckpt_arg);
    ModelConfig mc =
        parse_fingerprint(peek_fingerprint((fs::path(ckpt_dir) / "params.bin").string()));
    require(mc.ablation == mode, "checkpoint " + ckpt_arg + " holds mode " +
                                     to_string(mc.ablation) + ", expected " + to_string(mode));
    MlsmModel<Real> model(mc, 0);
    load_checkpoint(ckpt_dir, model, static_cast<nn::Adam<Real>*>(nullptr));
    ImageStore store = ImageStore::for_index(index, mc.image_size);
    std::unique_ptr<CropSource> crops;
    if (mc.ablation == Ablation::IGO) {
      if (crops_dir.empty()) throw ConfigError("the I+G+O cell needs --crops <dir>");
      crops = std::make_unique<CropSource>(crops_dir, index.norm_mean, index.norm_std, &store,
                                           !lenient_crops);
    }
    for (int k : {1, 5}) {
      EvalOptions opts;
      opts.split =
          parse_split(!split_name.empty() ? split_name : cfg.get_str("eval.split", "novel"));
      opts.n_episodes =
          static_cast<int>(ep.episodes >= 0 ? ep.episodes : cfg.get_int("eval.episodes", 100));
      opts.c_way = static_cast<int>(ep.way >= 0 ? ep.way : cfg.get_int("eval.way", 5));
      opts.k_shot = k;
      opts.n_query =
          static_cast<int>(ep.queries >= 0 ? ep.queries : cfg.get_int("eval.queries", 200));
      opts.seed = derive_seed(master_seed, "ablation-cell",
                              static_cast<std::uint64_t>(static_cast<int>(mode) * 10 + k));
      EvalReport report = evaluate_model(model, index, store, crops.get(), opts);
      std::string tag = to_string(mode);
      std::replace(tag.begin(), tag.end(), '+', '_');
      report.save(
          (fs::path(common.out) / ("report_" + tag + "_" + std::to_string(k) + "shot.txt"))
              .string());
      cells.push_back({mode, k, std::move(report)});
      std::cout << "evaluated " << to_string(mode) << " " << k << "-shot\n";
    }
  }
  const std::string table = render_ablation_table(cells);
  std::ofstream(fs::path(common.out) / "table.txt") << table;
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level similarity model for few-shot image recognition"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string root, index_dir, crops_dir, checkpoint, images, split_name, ablation_flag;
  std::string ckpt_i, ckpt_ig, ckpt_igo;
  double threshold = -1;
  bool overlay = false, resume = false, lenient = false;
  EpisodeFlagOpts ep;

  auto* prepare = app.add_subcommand("prepare", "Index a dataset and assign class splits");
  add_common(prepare, common);
  prepare->add_option("--root", root, "Dataset root (root/<class>/<image>)");

  auto* trainloc = app.add_subcommand("train-localizer", "Train the base classifier for Grad-CAM");
  add_common(trainloc, common);
  trainloc->add_option("--index", index_dir, "Directory written by `prepare`")->required();

  auto* localize = app.add_subcommand("localize", "Precompute object crops via Grad-CAM");
  add_common(localize, common);
  localize->add_option("--checkpoint", checkpoint, "Classifier checkpoint directory")->required();
  localize->add_option("--images", images, "Directory of images (class subdirectories)")
      ->required();
  localize->add_option("--threshold", threshold, "Heatmap threshold fraction (default 0.2)");
  localize->add_flag("--overlay", overlay, "Also write heatmap-over-image composites");

  auto* train = app.add_subcommand("train", "Episodic training of the similarity model");
  add_common(train, common);
  train->add_option("--index", index_dir, "Directory written by `prepare`")->required();
  train->add_option("--crops", crops_dir, "Crop cache from `localize` (required for I+G+O)");
  train->add_option("--ablation", ablation_flag, "Level set: I, I+G or I+G+O");
  add_episode_flags(train, ep);
  train->add_flag("--resume", resume, "Continue from ckpt_last in the run directory");
  train->add_flag("--lenient-crops", lenient, "Fall back to full images on crop cache misses");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an episode protocol");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint or training run directory")->required();
  eval->add_option("--index", index_dir, "Directory written by `prepare`")->required();
  eval->add_option("--crops", crops_dir, "Crop cache from `localize`");
  eval->add_option("--split", split_name, "base, val or novel (default novel)");
  add_episode_flags(eval, ep);
  eval->add_flag("--lenient-crops", lenient, "Fall back to full images on crop cache misses");

  auto* ablation = app.add_subcommand("ablation", "Evaluate the I / I+G / I+G+O grid");
  add_common(ablation, common);
  ablation->add_option("--ckpt-i", ckpt_i, "Checkpoint trained with --ablation I")->required();
  ablation->add_option("--ckpt-ig", ckpt_ig, "Checkpoint trained with --ablation I+G")->required();
  ablation->add_option("--ckpt-igo", ckpt_igo, "Checkpoint trained with --ablation I+G+O")
      ->required();
  ablation->add_option("--index", index_dir, "Directory written by `prepare`")->required();
  ablation->add_option("--crops", crops_dir, "Crop cache from `localize`");
  ablation->add_option("--split", split_name, "base, val or novel (default novel)");
  add_episode_flags(ablation, ep);
  ablation->add_flag("--lenient-crops", lenient, "Fall back to full images on crop cache misses");

  auto* overlay_cmd = app.add_subcommand("overlay", "Render Grad-CAM overlay composites");
  add_common(overlay_cmd, common);
  overlay_cmd->add_option("--checkpoint", checkpoint, "Classifier checkpoint directory")
      ->required();
  overlay_cmd->add_option("--images", images, "Directory of images")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0; any usage error exits 1
  }

  try {
    if (prepare->parsed()) return cmd_prepare(common, root);
    if (trainloc->parsed()) return cmd_train_localizer(common, index_dir);
    if (localize->parsed()) return cmd_localize(common, checkpoint, images, threshold, overlay);
    if (train->parsed())
      return cmd_train(common, index_dir, crops_dir, ablation_flag, ep, resume, lenient);
    if (eval->parsed())
      return cmd_eval(common, checkpoint, index_dir, crops_dir, split_name, ep, lenient);
    if (ablation->parsed())
      return cmd_ablation(common, ckpt_i, ckpt_ig, ckpt_igo, index_dir, crops_dir, split_name, ep,
                          lenient);
    if (overlay_cmd->parsed()) return cmd_overlay(common, checkpoint, images);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
