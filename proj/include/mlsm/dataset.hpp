#pragma once

#include "mlsm/rng.hpp"
#include "mlsm/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace mlsm {

enum class Split { Base, Val, Novel };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct IndexEntry {
  std::string rel_path;  // <class_name>/<file>
  int class_id = 0;
};

/// Class-disjoint dataset index. Class ids are the rank of the class name in
/// sorted order; the split assignment shuffles ids with split_seed and
/// partitions them, so a (root, seed) pair always yields the same splits.
struct DatasetIndex {
  std::string root;
  std::vector<std::string> class_names;  // by class_id
  std::vector<Split> class_split;        // by class_id
  std::vector<IndexEntry> entries;
  std::array<float, 3> norm_mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> norm_std{1.0f, 1.0f, 1.0f};

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<int> classes_of(Split s) const;
  /// Entry indices per class id.
  std::vector<std::vector<int>> entries_by_class() const;
  int count_of(Split s) const;
};

struct SplitFractions {
  double base = 0.5, val = 0.25, novel = 0.25;
};

/// Scan root/<class_name>/<image_file>, assign splits, and compute base-split
/// normalization statistics. Errors on unreadable roots and empty classes.
DatasetIndex build_index(const std::string& dataset_root, std::uint64_t split_seed,
                         const SplitFractions& fractions = {}, int image_size = 84,
                         int max_stat_images = 512);

/// Line format: relative_path<TAB>class_id<TAB>split. Stats go next to it.
void save_index(const DatasetIndex& index, const std::string& out_dir);
DatasetIndex load_index(const std::string& dir);

}  // namespace mlsm
