#pragma once

#include "mlsm/checkpoint.hpp"
#include "mlsm/episode.hpp"
#include "mlsm/localizer.hpp"

#include <cmath>
#include <functional>
#include <iomanip>

namespace mlsm {

struct TrainConfig {
  int c_way = 5;
  int k_shot = 1;
  int n_query = 75;  // total queries per training episode (15 per class at 5-way)
  long max_episodes = 100000;
  double lr0 = 0.001;
  long lr_half_period = 100000;
  long eval_interval = 1000;
  int val_episodes = 100;
  std::uint64_t seed = 0;

  void validate() const {
    require(lr0 > 0, "train config: lr0 must be positive");
    require(lr_half_period > 0, "train config: lr_half_period must be positive");
    require(c_way >= 1 && k_shot >= 1 && n_query >= 1, "train config: episode sizes must be >= 1");
    require(max_episodes >= 0, "train config: max_episodes must be >= 0");
  }
};

/// Step schedule: halve the initial rate every lr_half_period episodes.
inline double lr_schedule(long episode, const TrainConfig& cfg) {
  const long halvings = episode / cfg.lr_half_period;
  return cfg.lr0 * std::pow(0.5, static_cast<double>(halvings));
}

// ---------------------------------------------------------------------------
// Evaluation protocol and reports.
// ---------------------------------------------------------------------------

struct EvalOptions {
  Split split = Split::Novel;
  int n_episodes = 100;
  int c_way = 5;
  int k_shot = 1;
  int n_query = 200;  // total per episode; see query_interpretation in the report
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<double> per_episode_acc;
  double mean_acc = 0;
  double ci95 = 0;
  int n_episodes = 0;
  int c_way = 0;
  int k_shot = 0;
  int n_query_eval = 0;
  std::string split;
  std::string ablation;
  std::string fingerprint;
  std::string query_interpretation = "total-per-episode";
  std::uint64_t seed = 0;

  void finalize() {
    n_episodes = static_cast<int>(per_episode_acc.size());
    double sum = 0;
    for (double a : per_episode_acc) sum += a;
    mean_acc = n_episodes > 0 ? sum / n_episodes : 0.0;
    if (n_episodes > 1) {
      double sq = 0;
      for (double a : per_episode_acc) sq += (a - mean_acc) * (a - mean_acc);
      const double stddev = std::sqrt(sq / (n_episodes - 1));
      ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(n_episodes));
    } else {
      ci95 = 0;
    }
  }

  std::string serialize() const {
    std::ostringstream out;
    out << "mlsm-eval-report-v1\n";
    out << "fingerprint " << fingerprint << "\n";
    out << "ablation " << ablation << "\n";
    out << "split " << split << "\n";
    out << "n_episodes " << n_episodes << "\n";
    out << "c_way " << c_way << "\n";
    out << "k_shot " << k_shot << "\n";
    out << "n_query_eval " << n_query_eval << "\n";
    out << "query_interpretation " << query_interpretation << "\n";
    out << "seed " << seed << "\n";
    out << std::fixed << std::setprecision(6);
    out << "mean_acc " << mean_acc << "\n";
    out << "ci95 " << ci95 << "\n";
    out << "per_episode_acc\n";
    for (std::size_t i = 0; i < per_episode_acc.size(); ++i)
      out << i << " " << per_episode_acc[i] << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write eval report: " + path);
    out << serialize();
  }

  static EvalReport parse(std::istream& in) {
    EvalReport r;
    std::string line;
    if (!std::getline(in, line) || line != "mlsm-eval-report-v1")
      throw std::runtime_error("not an eval report");
    bool in_acc = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      if (!in_acc) {
        std::string key;
        ls >> key;
        if (key == "fingerprint") ls >> r.fingerprint;
        else if (key == "ablation") ls >> r.ablation;
        else if (key == "split") ls >> r.split;
        else if (key == "n_episodes") ls >> r.n_episodes;
        else if (key == "c_way") ls >> r.c_way;
        else if (key == "k_shot") ls >> r.k_shot;
        else if (key == "n_query_eval") ls >> r.n_query_eval;
        else if (key == "query_interpretation") ls >> r.query_interpretation;
        else if (key == "seed") ls >> r.seed;
        else if (key == "mean_acc") ls >> r.mean_acc;
        else if (key == "ci95") ls >> r.ci95;
        else if (key == "per_episode_acc") in_acc = true;
      } else {
        int idx;
        double acc;
        if (ls >> idx >> acc) r.per_episode_acc.push_back(acc);
      }
    }
    return r;
  }

  static EvalReport load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open eval report: " + path);
    return parse(in);
  }
};

/// Scores a planned episode: returns an n_query x c_way matrix. The model
/// path materializes images; injected scorers (oracle, uniform-random)
/// operate on plans alone and never decode.
using PlanScorer = std::function<MatF(const EpisodePlan&, std::uint64_t episode_seed)>;

inline EvalReport evaluate_with_scorer(const DatasetIndex& index, const EvalOptions& opts,
                                       const PlanScorer& scorer) {
  EvalReport report;
  report.split = to_string(opts.split);
  report.c_way = opts.c_way;
  report.k_shot = opts.k_shot;
  report.n_query_eval = opts.n_query;
  report.seed = opts.seed;
  for (int e = 0; e < opts.n_episodes; ++e) {
    const std::uint64_t ep_seed = derive_seed(opts.seed, "eval-episode", static_cast<std::uint64_t>(e));
    Rng rng(ep_seed);
    EpisodePlan plan = plan_episode(index, opts.split, opts.c_way, opts.k_shot, opts.n_query, rng);
    MatF scores = scorer(plan, ep_seed);
    require(scores.rows() == static_cast<Eigen::Index>(plan.query.size()) &&
                scores.cols() == opts.c_way,
            "evaluate: scorer returned a wrong-shaped matrix");
    std::vector<int> pred = predict(scores);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < plan.query.size(); ++q)
      if (pred[q] == plan.query[q].label) ++correct;
    report.per_episode_acc.push_back(static_cast<double>(correct) /
                                     static_cast<double>(plan.query.size()));
  }
  report.finalize();
  return report;
}

/// Classification without model updates: parameters are read-only here.
template <class S>
EvalReport evaluate_model(MlsmModel<S>& model, const DatasetIndex& index, const ImageStore& store,
                          const CropSource* crops, const EvalOptions& opts) {
  const CropSource* crop_src = model.cfg.ablation == Ablation::IGO ? crops : nullptr;
  if (model.cfg.ablation == Ablation::IGO)
    require(crops != nullptr, "evaluate_model: I+G+O evaluation needs a crop source");
  EvalReport report = evaluate_with_scorer(
      index, opts, [&](const EpisodePlan& plan, std::uint64_t) {
        Episode ep = materialize_episode(index, plan, store);
        EpisodeTensors<S> t = episode_tensors<S>(ep, crop_src);
        Mat<S> scores = model.score_episode(t);
        return scores.template cast<float>().eval();
      });
  report.ablation = to_string(model.cfg.ablation);
  report.fingerprint = model.cfg.fingerprint();
  return report;
}

// ---------------------------------------------------------------------------
// Model checkpoints: parameters + optimizer state + counters in a directory.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string fingerprint;
  long episode = 0;
  double best_val_acc = -1;
};

template <class S>
void save_checkpoint(const std::string& dir, MlsmModel<S>& model, const nn::Adam<S>* adam,
                     const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto& refs = model.param_refs();
  save_params((fs::path(dir) / "params.bin").string(), model.cfg.fingerprint(), refs);
  if (adam) save_adam((fs::path(dir) / "optim.bin").string(), model.cfg.fingerprint(), refs, *adam);
  std::ofstream out(fs::path(dir) / "meta.txt");
  out << "format mlsm-checkpoint-v1\n";
  out << "fingerprint " << model.cfg.fingerprint() << "\n";
  out << "episode " << meta.episode << "\n";
  out << std::setprecision(17) << "best_val_acc " << meta.best_val_acc << "\n";
}

template <class S>
CheckpointMeta load_checkpoint(const std::string& dir, MlsmModel<S>& model, nn::Adam<S>* adam) {
  namespace fs = std::filesystem;
  auto& refs = model.param_refs();
  load_params((fs::path(dir) / "params.bin").string(), model.cfg.fingerprint(), refs);
  if (adam) {
    const std::string optim = (fs::path(dir) / "optim.bin").string();
    require(fs::exists(optim), "checkpoint has no optimizer state: " + dir);
    load_adam(optim, model.cfg.fingerprint(), refs, *adam);
  }
  CheckpointMeta meta;
  std::ifstream in(fs::path(dir) / "meta.txt");
  if (!in) throw std::runtime_error("checkpoint meta missing in " + dir);
  std::string key;
  while (in >> key) {
    if (key == "episode") in >> meta.episode;
    else if (key == "best_val_acc") in >> meta.best_val_acc;
    else if (key == "fingerprint") in >> meta.fingerprint;
    else std::getline(in, key);
  }
  return meta;
}

// ---------------------------------------------------------------------------
// Episodic training with validation-based model selection.
// ---------------------------------------------------------------------------

struct TrainResult {
  long episodes_run = 0;
  double final_loss = 0;
  double best_val_acc = -1;
  std::string last_checkpoint, best_checkpoint;
};

/// Per-episode: sample from the base split, forward, loss, Adam step at the
/// scheduled rate. Every eval_interval episodes the val split is scored and
/// the best checkpoint retained. Runs resume exactly from the last
/// checkpoint: episode seeds derive from (seed, counter), so no generator
/// state needs persisting.
template <class S>
TrainResult train_model(MlsmModel<S>& model, nn::Adam<S>& adam, const DatasetIndex& index,
                        const ImageStore& store, const CropSource* crops, const TrainConfig& cfg,
                        const std::string& run_dir, long start_episode, std::ostream* log) {
  namespace fs = std::filesystem;
  cfg.validate();
  const CropSource* crop_src = model.cfg.ablation == Ablation::IGO ? crops : nullptr;
  if (model.cfg.ablation == Ablation::IGO)
    require(crops != nullptr, "train_model: I+G+O training needs a crop source");
  fs::create_directories(run_dir);
  const std::string last_dir = (fs::path(run_dir) / "ckpt_last").string();
  const std::string best_dir = (fs::path(run_dir) / "ckpt_best").string();

  // Validation runs on the val split when it can host an episode, otherwise
  // on base (tiny datasets).
  const Split val_split =
      index.count_of(Split::Val) >= cfg.c_way ? Split::Val : Split::Base;

  TrainResult result;
  result.best_val_acc = -1;
  if (start_episode > 0) {
    CheckpointMeta meta;
    std::ifstream in(fs::path(last_dir) / "meta.txt");
    if (in) {
      std::string key;
      while (in >> key) {
        if (key == "best_val_acc") in >> meta.best_val_acc;
        else std::getline(in, key);
      }
      result.best_val_acc = meta.best_val_acc;
    }
  }

  std::ofstream trace(fs::path(run_dir) / "loss_trace.txt", std::ios::app);
  if (!trace) throw std::runtime_error("cannot open loss trace in " + run_dir);

  auto save_state = [&](const std::string& dir, long episode) {
    CheckpointMeta meta;
    meta.episode = episode;
    meta.best_val_acc = result.best_val_acc;
    save_checkpoint(dir, model, &adam, meta);
  };

  if (cfg.max_episodes == start_episode || cfg.max_episodes == 0) {
    save_state(last_dir, start_episode);
    result.last_checkpoint = last_dir;
    return result;
  }

  auto run_validation = [&](long episode) {
    EvalOptions vopts;
    vopts.split = val_split;
    vopts.n_episodes = cfg.val_episodes;
    vopts.c_way = cfg.c_way;
    vopts.k_shot = cfg.k_shot;
    vopts.n_query = cfg.n_query;
    vopts.seed = derive_seed(cfg.seed, "val", static_cast<std::uint64_t>(episode));
    EvalReport rep = evaluate_model(model, index, store, crop_src, vopts);
    if (log)
      *log << "episode " << episode << " val_acc " << std::fixed << std::setprecision(4)
           << rep.mean_acc << " (split " << to_string(val_split) << ")\n";
    if (rep.mean_acc > result.best_val_acc) {
      result.best_val_acc = rep.mean_acc;
      save_state(best_dir, episode);
      result.best_checkpoint = best_dir;
    }
  };

  for (long ep = start_episode; ep < cfg.max_episodes; ++ep) {
    Rng rng(derive_seed(cfg.seed, "train-episode", static_cast<std::uint64_t>(ep)));
    EpisodePlan plan = plan_episode(index, Split::Base, cfg.c_way, cfg.k_shot, cfg.n_query, rng);
    Episode episode = materialize_episode(index, plan, store);
    EpisodeTensors<S> tensors = episode_tensors<S>(episode, crop_src);
    const double lr = lr_schedule(ep, cfg);
    const double loss = static_cast<double>(model.train_step(tensors, adam, lr));
    if (!std::isfinite(loss))
      throw std::runtime_error("training diverged at episode " + std::to_string(ep) +
                               " (loss is not finite)");
    trace << ep << "\t" << std::setprecision(17) << loss << "\n";
    result.final_loss = loss;
    result.episodes_run = ep + 1;
    if ((ep + 1) % cfg.eval_interval == 0 || ep + 1 == cfg.max_episodes) {
      trace.flush();
      run_validation(ep + 1);
      save_state(last_dir, ep + 1);
      if (log)
        *log << "episode " << (ep + 1) << "/" << cfg.max_episodes << " loss "
             << std::setprecision(6) << loss << " lr " << lr << "\n";
    }
  }
  result.last_checkpoint = last_dir;
  if (result.best_checkpoint.empty()) result.best_checkpoint = best_dir;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation grid (levels x shots).
// ---------------------------------------------------------------------------

struct AblationCell {
  Ablation mode;
  int k_shot;
  EvalReport report;
};

inline std::string render_ablation_table(const std::vector<AblationCell>& cells) {
  auto find = [&](Ablation m, int k) -> const EvalReport* {
    for (const auto& c : cells)
      if (c.mode == m && c.k_shot == k) return &c.report;
    return nullptr;
  };
  std::ostringstream out;
  out << "level      1-shot (%)   5-shot (%)\n";
  for (Ablation m : {Ablation::I, Ablation::IG, Ablation::IGO}) {
    out << std::left << std::setw(11) << to_string(m);
    for (int k : {1, 5}) {
      const EvalReport* r = find(m, k);
      if (r) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << 100.0 * r->mean_acc << " +- "
             << std::setprecision(2) << 100.0 * r->ci95;
        out << std::left << std::setw(13) << cell.str();
      } else {
        out << std::left << std::setw(13) << "-";
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace mlsm
