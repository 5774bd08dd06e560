#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dfml/mat.hpp"
#include "dfml/rng.hpp"

namespace dfml {

enum class Split { meta_train, meta_test };

// A labeled data distribution with disjoint meta-train / meta-test class
// splits. Class ids are global (unique across all registered sources).
class Source {
 public:
  virtual ~Source() = default;

  virtual std::string id() const = 0;
  virtual std::vector<int> input_shape() const = 0;
  virtual std::vector<int> class_ids(Split split) const = 0;

  // Appends n rows for the given class. Draws are independent.
  virtual void sample(int class_id, int n, Rng& rng, MatD& out) const = 0;

  // Support/query rows for one episode class; the two sets are disjoint.
  virtual void sample_episode_rows(int class_id, int k_support, int k_query, Rng& rng,
                                   MatD& support_out, MatD& query_out) const;

  int input_dim() const { return shape_numel(input_shape()); }
  bool owns_class(int class_id, Split split) const;
};

// Well-separated Gaussian clusters in [0,1]^dims. Cluster means are drawn
// once per class from the class id, so two sources with the same seed and
// different id offsets describe different worlds.
class GaussianClustersSource : public Source {
 public:
  GaussianClustersSource(std::string source_id, int dims, int train_classes, int test_classes,
                         double sigma, std::uint64_t seed, int class_id_offset);

  std::string id() const override { return id_; }
  std::vector<int> input_shape() const override { return {dims_}; }
  std::vector<int> class_ids(Split split) const override;
  void sample(int class_id, int n, Rng& rng, MatD& out) const override;

 private:
  std::vector<double> class_mean(int class_id) const;
  std::string id_;
  int dims_, train_classes_, test_classes_, offset_;
  double sigma_;
  std::uint64_t seed_;
};

// Procedurally rendered 16x16 grayscale glyphs: each class is a seeded
// coarse bitmap; samples jitter position, intensity, and noise.
class GlyphSource : public Source {
 public:
  GlyphSource(std::string source_id, int train_classes, int test_classes, std::uint64_t seed,
              int class_id_offset);

  std::string id() const override { return id_; }
  std::vector<int> input_shape() const override { return {1, kImgSize, kImgSize}; }
  std::vector<int> class_ids(Split split) const override;
  void sample(int class_id, int n, Rng& rng, MatD& out) const override;

  static constexpr int kImgSize = 16;

 private:
  std::vector<double> base_glyph(int class_id) const;
  std::string id_;
  int train_classes_, test_classes_, offset_;
  std::uint64_t seed_;
};

// Directory-of-class-folders ingestion:
//   root/meta_train/<class>/*.pgm|*.ppm
//   root/meta_test/<class>/*.pgm|*.ppm
// All images must share one shape. Samples draw stored images (adding no
// augmentation); episode support/query draws are disjoint image indices.
class DirectoryImageSource : public Source {
 public:
  DirectoryImageSource(std::string source_id, const std::string& root, int class_id_offset);

  std::string id() const override { return id_; }
  std::vector<int> input_shape() const override { return shape_; }
  std::vector<int> class_ids(Split split) const override;
  void sample(int class_id, int n, Rng& rng, MatD& out) const override;
  void sample_episode_rows(int class_id, int k_support, int k_query, Rng& rng, MatD& support_out,
                           MatD& query_out) const override;

  const std::string& class_name(int class_id) const;

 private:
  struct ClassData {
    std::string name;
    Split split;
    std::vector<std::vector<double>> images;
  };
  const ClassData& cls(int class_id) const;
  std::string id_;
  int offset_;
  std::vector<int> shape_;
  std::vector<ClassData> classes_;
};

// Owns the sources of one experiment and the global class registry.
class SourceSet {
 public:
  void add(std::unique_ptr<Source> s);
  int count() const { return int(sources_.size()); }
  const Source& at(int i) const { return *sources_[i]; }
  const Source* by_id(const std::string& id) const;
  std::vector<const Source*> all() const;

  // split membership across every source; unknown ids throw
  Split split_of(int class_id) const;
  std::vector<int> class_ids(Split split) const;
  const Source& source_of_class(int class_id) const;

  // next free class id offset for registration convenience
  int next_offset() const { return next_offset_; }
  void reserve_offset(int n) { next_offset_ += n; }

 private:
  std::vector<std::unique_ptr<Source>> sources_;
  int next_offset_ = 0;
};

// Grayscale PGM / color PPM (binary P5/P6) helpers for ingestion and for
// exporting recovered-sample grids.
std::vector<double> read_pnm(const std::string& path, std::vector<int>& shape);
void write_pgm(const std::string& path, const double* data, int h, int w);

}  // namespace dfml
