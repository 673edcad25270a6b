#pragma once

#include "dccl/types.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

namespace dccl {

/// M×D_in matrix of raw input features, all entries finite.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(MatrixXd data);

  Index count() const { return data_.rows(); }
  Index dim() const { return data_.cols(); }
  const MatrixXd& data() const { return data_; }

 private:
  MatrixXd data_;
};

/// Partially labeled dataset. `labels` is what training may see;
/// `eval_labels` is ground truth kept for evaluation only.
struct GcdDataset {
  EmbeddingSet embeddings;
  std::vector<Label> labels;
  std::vector<ClassId> eval_labels;
  std::set<ClassId> labeled_class_set;
  std::optional<Index> true_num_classes;

  Index size() const { return embeddings.count(); }
  Index num_labeled_classes() const { return static_cast<Index>(labeled_class_set.size()); }
  Index num_labeled() const;
  bool is_labeled(Index i) const { return labels[static_cast<std::size_t>(i)].has_value(); }

  /// Throws InvalidArgument / ShapeError if an invariant is broken.
  void validate() const;
};

struct SplitSpec {
  double labeled_class_fraction = 0.5;
  double labeled_instance_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticSpec {
  Index num_superclasses = 2;
  Index classes_per_super = 5;
  Index instances_per_class = 100;
  Index dim = 32;
  double intra_class_sigma = 0.15;
  double superclass_spread = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  EmbeddingSet embeddings;
  std::vector<ClassId> class_labels;
  MatrixXd class_means;       // one row per class
  MatrixXd superclass_means;  // one row per superclass
};

/// Hierarchical Gaussian mixture. Superclass means ~ N(0, spread²/D·I),
/// class means ~ N(superclass mean, (spread/2)²/D·I), instances
/// ~ N(class mean, sigma²·I). Rows are grouped by class, class ids are
/// superclass-major.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

GcdDataset make_gcd_split(const EmbeddingSet& embeddings, const std::vector<ClassId>& class_labels,
                          const SplitSpec& spec);

enum class EmbeddingFormat { binary, csv };

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set,
                     EmbeddingFormat format);

/// Reads `index,label` rows; label -1 (or an absent index) means unlabeled.
std::vector<Label> load_labels(const std::filesystem::path& path, Index num_rows);
void save_labels(const std::filesystem::path& path, const std::vector<Label>& labels);

}  // namespace dccl
