#include "mlsm/dataset.hpp"

#include "mlsm/image.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace mlsm {

std::string to_string(Split s) {
  switch (s) {
    case Split::Base: return "base";
    case Split::Val: return "val";
    default: return "novel";
  }
}

Split parse_split(const std::string& s) {
  if (s == "base") return Split::Base;
  if (s == "val") return Split::Val;
  if (s == "novel") return Split::Novel;
  throw std::runtime_error("unknown split name: " + s);
}

std::vector<int> DatasetIndex::classes_of(Split s) const {
  std::vector<int> out;
  for (int c = 0; c < num_classes(); ++c)
    if (class_split[static_cast<std::size_t>(c)] == s) out.push_back(c);
  return out;
}

std::vector<std::vector<int>> DatasetIndex::entries_by_class() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_classes()));
  for (int i = 0; i < static_cast<int>(entries.size()); ++i)
    out[static_cast<std::size_t>(entries[static_cast<std::size_t>(i)].class_id)].push_back(i);
  return out;
}

int DatasetIndex::count_of(Split s) const {
  return static_cast<int>(classes_of(s).size());
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".ppm" || ext == ".pgm" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

DatasetIndex build_index(const std::string& dataset_root, std::uint64_t split_seed,
                         const SplitFractions& fractions, int image_size,
                         int max_stat_images) {
  require(fractions.base > 0, "build_index: base fraction must be positive");
  fs::path root(dataset_root);
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset root is not a readable directory: " + dataset_root);

  DatasetIndex index;
  index.root = dataset_root;

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw std::runtime_error("dataset root has no class directories: " + dataset_root);

  index.class_names = class_dirs;
  for (int cid = 0; cid < static_cast<int>(class_dirs.size()); ++cid) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(root / class_dirs[static_cast<std::size_t>(cid)]))
      if (e.is_regular_file() && is_image_file(e.path()))
        files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("class has zero images: " + class_dirs[static_cast<std::size_t>(cid)]);
    for (const auto& f : files)
      index.entries.push_back({class_dirs[static_cast<std::size_t>(cid)] + "/" + f, cid});
  }

  // Shuffle class ids with the split seed, then partition. floor() on the
  // base/val counts keeps 200 -> 100/50/50 and 20 -> 10/5/5 exact.
  const int n = index.num_classes();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(split_seed, "class-split", 0));
  rng.shuffle(order);
  const int n_base = static_cast<int>(n * fractions.base);
  const int n_val = static_cast<int>(n * fractions.val);
  require(n_base >= 1, "build_index: split fractions leave no base classes");
  require(n_base + n_val <= n, "build_index: split fractions exceed the class count");
  index.class_split.assign(static_cast<std::size_t>(n), Split::Novel);
  for (int i = 0; i < n_base; ++i)
    index.class_split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::Base;
  for (int i = n_base; i < n_base + n_val; ++i)
    index.class_split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::Val;

  // Per-channel mean/std over (a deterministic subsample of) the base split.
  std::vector<const IndexEntry*> base_entries;
  for (const auto& e : index.entries)
    if (index.class_split[static_cast<std::size_t>(e.class_id)] == Split::Base)
      base_entries.push_back(&e);
  const std::size_t stride =
      std::max<std::size_t>(1, base_entries.size() / static_cast<std::size_t>(max_stat_images));
  double sum[3] = {0, 0, 0}, sum_sq[3] = {0, 0, 0};
  long count = 0;
  for (std::size_t i = 0; i < base_entries.size(); i += stride) {
    TensorF img = load_image((root / base_entries[i]->rel_path).string(), image_size);
    for (int c = 0; c < 3; ++c) {
      sum[c] += img.data.col(c).sum();
      sum_sq[c] += img.data.col(c).array().square().sum();
    }
    count += img.spatial();
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(count);
    const double var = sum_sq[c] / static_cast<double>(count) - mean * mean;
    index.norm_mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
    index.norm_std[static_cast<std::size_t>(c)] =
        static_cast<float>(std::sqrt(std::max(var, 1e-8)));
  }
  return index;
}

void save_index(const DatasetIndex& index, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "index.tsv");
    if (!out) throw std::runtime_error("cannot write index file in " + out_dir);
    for (const auto& e : index.entries)
      out << e.rel_path << '\t' << e.class_id << '\t'
          << to_string(index.class_split[static_cast<std::size_t>(e.class_id)]) << '\n';
  }
  {
    std::ofstream out(fs::path(out_dir) / "index_meta.txt");
    out << "root " << index.root << "\n";
    out << "norm_mean " << index.norm_mean[0] << " " << index.norm_mean[1] << " "
        << index.norm_mean[2] << "\n";
    out << "norm_std " << index.norm_std[0] << " " << index.norm_std[1] << " "
        << index.norm_std[2] << "\n";
  }
}

DatasetIndex load_index(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "index.tsv");
  if (!in) throw std::runtime_error("cannot open index file in " + dir);
  DatasetIndex index;
  std::string line;
  std::vector<std::string> names;       // by class id, discovered from rel paths
  std::vector<Split> splits;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string rel, split_name;
    int cid = 0;
    if (!std::getline(ls, rel, '\t')) throw std::runtime_error("malformed index line: " + line);
    ls >> cid >> split_name;
    if (split_name.empty()) throw std::runtime_error("malformed index line: " + line);
    index.entries.push_back({rel, cid});
    if (cid >= static_cast<int>(names.size())) {
      names.resize(static_cast<std::size_t>(cid) + 1);
      splits.resize(static_cast<std::size_t>(cid) + 1, Split::Novel);
    }
    names[static_cast<std::size_t>(cid)] = rel.substr(0, rel.find('/'));
    splits[static_cast<std::size_t>(cid)] = parse_split(split_name);
  }
  index.class_names = std::move(names);
  index.class_split = std::move(splits);

  std::ifstream meta(fs::path(dir) / "index_meta.txt");
  if (meta) {
    std::string key;
    while (meta >> key) {
      if (key == "root") {
        std::getline(meta, index.root);
        if (!index.root.empty() && index.root.front() == ' ') index.root.erase(0, 1);
      } else if (key == "norm_mean") {
        meta >> index.norm_mean[0] >> index.norm_mean[1] >> index.norm_mean[2];
      } else if (key == "norm_std") {
        meta >> index.norm_std[0] >> index.norm_std[1] >> index.norm_std[2];
      } else {
        std::getline(meta, key);
      }
    }
  }
  return index;
}

}  // namespace mlsm
