#include "dfml/sources.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dfml/errors.hpp"

namespace fs = std::filesystem;

namespace dfml {

void Source::sample_episode_rows(int class_id, int k_support, int k_query, Rng& rng,
                                 MatD& support_out, MatD& query_out) const {
  // synthetic sources draw fresh, so separate calls are already disjoint
  sample(class_id, k_support, rng, support_out);
  sample(class_id, k_query, rng, query_out);
}

bool Source::owns_class(int class_id, Split split) const {
  const auto ids = class_ids(split);
  return std::find(ids.begin(), ids.end(), class_id) != ids.end();
}

namespace {

void append_rows(MatD& m, int n, int cols) {
  if (m.cols == 0) m.cols = cols;
  if (m.cols != cols) throw InputError("row width mismatch while appending samples");
  m.a.resize(m.a.size() + std::size_t(n) * cols, 0.0);
  m.rows += n;
}

double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

// ---------------------------------------------------------------------------
// GaussianClustersSource
// ---------------------------------------------------------------------------

GaussianClustersSource::GaussianClustersSource(std::string source_id, int dims, int train_classes,
                                               int test_classes, double sigma, std::uint64_t seed,
                                               int class_id_offset)
    : id_(std::move(source_id)),
      dims_(dims),
      train_classes_(train_classes),
      test_classes_(test_classes),
      offset_(class_id_offset),
      sigma_(sigma),
      seed_(seed) {
  if (dims < 1) throw ConfigError("gaussian source needs dims >= 1");
}

std::vector<int> GaussianClustersSource::class_ids(Split split) const {
  std::vector<int> ids;
  const int lo = split == Split::meta_train ? 0 : train_classes_;
  const int hi = split == Split::meta_train ? train_classes_ : train_classes_ + test_classes_;
  for (int i = lo; i < hi; ++i) ids.push_back(offset_ + i);
  return ids;
}

std::vector<double> GaussianClustersSource::class_mean(int class_id) const {
  Rng rng(derive_seed(seed_, {0xC1A5, std::uint64_t(class_id)}));
  std::vector<double> m(dims_);
  for (auto& v : m) v = rng.uniform(0.2, 0.8);
  return m;
}

void GaussianClustersSource::sample(int class_id, int n, Rng& rng, MatD& out) const {
  const auto mean = class_mean(class_id);
  const int base = out.rows;
  append_rows(out, n, dims_);
  for (int i = 0; i < n; ++i) {
    double* r = out.row(base + i);
    for (int d = 0; d < dims_; ++d) r[d] = clip01(mean[d] + sigma_ * rng.normal());
  }
}

// ---------------------------------------------------------------------------
// GlyphSource
// ---------------------------------------------------------------------------

GlyphSource::GlyphSource(std::string source_id, int train_classes, int test_classes,
                         std::uint64_t seed, int class_id_offset)
    : id_(std::move(source_id)),
      train_classes_(train_classes),
      test_classes_(test_classes),
      offset_(class_id_offset),
      seed_(seed) {}

std::vector<int> GlyphSource::class_ids(Split split) const {
  std::vector<int> ids;
  const int lo = split == Split::meta_train ? 0 : train_classes_;
  const int hi = split == Split::meta_train ? train_classes_ : train_classes_ + test_classes_;
  for (int i = lo; i < hi; ++i) ids.push_back(offset_ + i);
  return ids;
}

std::vector<double> GlyphSource::base_glyph(int class_id) const {
  // seeded 4x4 coarse bitmap with at least 6 active cells, upsampled x4
  Rng rng(derive_seed(seed_, {0x617F, std::uint64_t(class_id)}));
  std::vector<int> coarse(16, 0);
  int active = 0;
  while (active < 6) {
    active = 0;
    for (auto& c : coarse) {
      c = rng.uniform() < 0.45 ? 1 : 0;
      active += c;
    }
  }
  std::vector<double> img(kImgSize * kImgSize, 0.0);
  for (int y = 0; y < kImgSize; ++y)
    for (int x = 0; x < kImgSize; ++x) img[y * kImgSize + x] = coarse[(y / 4) * 4 + (x / 4)];
  return img;
}

void GlyphSource::sample(int class_id, int n, Rng& rng, MatD& out) const {
  const auto base_img = base_glyph(class_id);
  const int base = out.rows;
  append_rows(out, n, kImgSize * kImgSize);
  for (int i = 0; i < n; ++i) {
    double* r = out.row(base + i);
    const int dy = rng.uniform_int(5) - 2;
    const int dx = rng.uniform_int(5) - 2;
    const double gain = rng.uniform(0.6, 1.0);
    for (int y = 0; y < kImgSize; ++y)
      for (int x = 0; x < kImgSize; ++x) {
        const int sy = y - dy, sx = x - dx;
        double v = 0.0;
        if (sy >= 0 && sy < kImgSize && sx >= 0 && sx < kImgSize)
          v = gain * base_img[sy * kImgSize + sx];
        r[y * kImgSize + x] = clip01(v + 0.08 * rng.normal());
      }
  }
}

// ---------------------------------------------------------------------------
// DirectoryImageSource
// ---------------------------------------------------------------------------

DirectoryImageSource::DirectoryImageSource(std::string source_id, const std::string& root,
                                           int class_id_offset)
    : id_(std::move(source_id)), offset_(class_id_offset) {
  for (const auto& [split_dir, split] :
       {std::pair{std::string("meta_train"), Split::meta_train},
        std::pair{std::string("meta_test"), Split::meta_test}}) {
    const fs::path dir = fs::path(root) / split_dir;
    if (!fs::exists(dir)) continue;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& cdir : class_dirs) {
      ClassData cd;
      cd.name = cdir.filename().string();
      cd.split = split;
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(cdir)) {
        const auto ext = f.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        std::vector<int> shape;
        cd.images.push_back(read_pnm(f.string(), shape));
        if (shape_.empty())
          shape_ = shape;
        else if (shape_ != shape)
          throw ConfigError("image shape mismatch under '" + root + "'");
      }
      if (!cd.images.empty()) classes_.push_back(std::move(cd));
    }
  }
  if (classes_.empty()) throw ConfigError("no class folders with images under '" + root + "'");
}

std::vector<int> DirectoryImageSource::class_ids(Split split) const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i].split == split) ids.push_back(offset_ + int(i));
  return ids;
}

const DirectoryImageSource::ClassData& DirectoryImageSource::cls(int class_id) const {
  const int i = class_id - offset_;
  if (i < 0 || i >= int(classes_.size())) throw InputError("class id not in this source");
  return classes_[i];
}

const std::string& DirectoryImageSource::class_name(int class_id) const { return cls(class_id).name; }

void DirectoryImageSource::sample(int class_id, int n, Rng& rng, MatD& out) const {
  const ClassData& cd = cls(class_id);
  const int base = out.rows;
  append_rows(out, n, shape_numel(shape_));
  for (int i = 0; i < n; ++i) {
    const auto& img = cd.images[rng.uniform_int(int(cd.images.size()))];
    std::copy(img.begin(), img.end(), out.row(base + i));
  }
}

void DirectoryImageSource::sample_episode_rows(int class_id, int k_support, int k_query, Rng& rng,
                                               MatD& support_out, MatD& query_out) const {
  const ClassData& cd = cls(class_id);
  const int need = k_support + k_query;
  if (int(cd.images.size()) < need)
    throw SamplingError("class '" + cd.name + "' has " + std::to_string(cd.images.size()) +
                        " images, needs " + std::to_string(need));
  const auto idx = rng.sample_without_replacement(int(cd.images.size()), need);
  const int sbase = support_out.rows, qbase = query_out.rows;
  append_rows(support_out, k_support, shape_numel(shape_));
  append_rows(query_out, k_query, shape_numel(shape_));
  for (int i = 0; i < k_support; ++i)
    std::copy(cd.images[idx[i]].begin(), cd.images[idx[i]].end(), support_out.row(sbase + i));
  for (int i = 0; i < k_query; ++i)
    std::copy(cd.images[idx[k_support + i]].begin(), cd.images[idx[k_support + i]].end(),
              query_out.row(qbase + i));
}

// ---------------------------------------------------------------------------
// SourceSet
// ---------------------------------------------------------------------------

void SourceSet::add(std::unique_ptr<Source> s) { sources_.push_back(std::move(s)); }

const Source* SourceSet::by_id(const std::string& id) const {
  for (const auto& s : sources_)
    if (s->id() == id) return s.get();
  return nullptr;
}

std::vector<const Source*> SourceSet::all() const {
  std::vector<const Source*> v;
  for (const auto& s : sources_) v.push_back(s.get());
  return v;
}

Split SourceSet::split_of(int class_id) const {
  for (const auto& s : sources_) {
    if (s->owns_class(class_id, Split::meta_train)) return Split::meta_train;
    if (s->owns_class(class_id, Split::meta_test)) return Split::meta_test;
  }
  throw InputError("unknown class id " + std::to_string(class_id));
}

std::vector<int> SourceSet::class_ids(Split split) const {
  std::vector<int> ids;
  for (const auto& s : sources_) {
    auto v = s->class_ids(split);
    ids.insert(ids.end(), v.begin(), v.end());
  }
  return ids;
}

const Source& SourceSet::source_of_class(int class_id) const {
  for (const auto& s : sources_)
    if (s->owns_class(class_id, Split::meta_train) || s->owns_class(class_id, Split::meta_test))
      return *s;
  throw InputError("unknown class id " + std::to_string(class_id));
}

// ---------------------------------------------------------------------------
// PNM io
// ---------------------------------------------------------------------------

std::vector<double> read_pnm(const std::string& path, std::vector<int>& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw IoError("'" + path + "': only binary P5/P6 supported");
  auto next_int = [&in, &path]() {
    int v;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      if (!(in >> v)) throw IoError("'" + path + "': malformed header");
      return v;
    }
  };
  const int w = next_int(), h = next_int(), maxv = next_int();
  in.get();  // single whitespace after header
  const int ch = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> raw(std::size_t(w) * h * ch);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!in) throw IoError("'" + path + "': truncated pixel data");
  shape = {ch, h, w};
  // interleaved -> channel-major, scaled to [0,1]
  std::vector<double> img(raw.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img[(std::size_t(c) * h + y) * w + x] =
            double(raw[(std::size_t(y) * w + x) * ch + c]) / maxv;
  return img;
}

void write_pgm(const std::string& path, const double* data, int h, int w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < h * w; ++i) {
    const double v = data[i] < 0.0 ? 0.0 : (data[i] > 1.0 ? 1.0 : data[i]);
    out.put(char(int(v * 255.0 + 0.5)));
  }
}

}  // namespace dfml
