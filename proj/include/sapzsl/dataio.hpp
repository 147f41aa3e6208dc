#pragma once

// Datasets, the text matrix format, manifests, normalization, pool
// augmentation, the seeded synthetic generator and the generalized split.

#include <sapzsl/core.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace sapzsl {

inline constexpr Index kUnlabeled = -1;

/// Seen-class training data. Column i of X is image i; column i of Y_init is
/// its attribute vector, exactly zero when the image is unannotated.
struct Dataset {
  Matrix X;       // d x N_s
  Matrix Y_init;  // k x N_s
  std::vector<bool> annotated;
  std::vector<Index> labels;  // seen-class index or kUnlabeled
  Matrix Z_s;                 // k x p
  Matrix Z_u;                 // k x q

  Index d() const { return X.rows(); }
  Index k() const { return Y_init.rows(); }
  Index n() const { return X.cols(); }
  Index p() const { return Z_s.cols(); }
  Index q() const { return Z_u.cols(); }
  Index r() const { return std::count(annotated.begin(), annotated.end(), true); }

  /// Z_s and Z_u side by side; joint label j < p is seen, j >= p unseen.
  Matrix joint_prototypes() const {
    Matrix z(k(), p() + q());
    z << Z_s, Z_u;
    return z;
  }

  void validate() const {
    if (Y_init.cols() != n()) {
      throw DataError("dataset: features have " + std::to_string(n()) +
                      " columns but attributes have " + std::to_string(Y_init.cols()));
    }
    if (static_cast<Index>(annotated.size()) != n() || static_cast<Index>(labels.size()) != n()) {
      throw DataError("dataset: mask/labels length does not match N_s=" + std::to_string(n()));
    }
    if (Z_s.rows() != k() || Z_u.rows() != k()) {
      throw DataError("dataset: prototypes have " + std::to_string(Z_s.rows()) + "/" +
                      std::to_string(Z_u.rows()) + " rows, attributes have " +
                      std::to_string(k()));
    }
    for (Index i = 0; i < n(); ++i) {
      const Index l = labels[static_cast<std::size_t>(i)];
      if (l != kUnlabeled && (l < 0 || l >= p())) {
        throw DataError("dataset: label " + std::to_string(l) + " of image " + std::to_string(i) +
                        " outside [0, " + std::to_string(p()) + ")");
      }
      if (!annotated[static_cast<std::size_t>(i)] && !Y_init.col(i).isZero(0.0)) {
        throw DataError("dataset: unannotated image " + std::to_string(i) +
                        " has a nonzero attribute vector");
      }
    }
    require_finite(X, "dataset features");
    require_finite(Y_init, "dataset attributes");
  }
};

/// Test images with class indices into whatever prototype set they are scored
/// against (Z_u for standard ZSL, [Z_s Z_u] for the generalized protocol).
struct TestSet {
  Matrix X;
  std::vector<Index> truth;

  Index n() const { return X.cols(); }
};

// ---------------------------------------------------------------------------
// Matrix text format: "ROWS COLS" header, then ROWS lines of COLS numbers
// separated by single spaces. Lines starting with '#' are comments.

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_spaces(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

inline Matrix parse_matrix(std::string_view text, const std::string& origin = "<memory>") {
  auto fail = [&](std::size_t line, const std::string& msg) -> DataError {
    return DataError(origin + ":" + std::to_string(line) + ": " + msg);
  };

  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& out) {
    while (pos <= text.size()) {
      if (pos == text.size()) return false;
      const auto nl = text.find('\n', pos);
      const auto end = nl == std::string_view::npos ? text.size() : nl;
      std::string_view line = detail::trim(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (line.empty() || line.front() == '#') continue;
      out = line;
      return true;
    }
    return false;
  };

  std::string_view line;
  if (!next_line(line)) throw fail(line_no == 0 ? 1 : line_no, "empty matrix file");
  const auto header = detail::split_spaces(line);
  long long rows = 0;
  long long cols = 0;
  if (header.size() != 2 || !detail::parse_number(header[0], rows) ||
      !detail::parse_number(header[1], cols) || rows < 0 || cols < 0) {
    throw fail(line_no, "malformed header, expected \"ROWS COLS\"");
  }
  Matrix m(rows, cols);
  // A matrix without columns has no data lines (they would be blank).
  for (long long r = 0; cols > 0 && r < rows; ++r) {
    if (!next_line(line)) {
      throw fail(line_no, "expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
    }
    const auto toks = detail::split_spaces(line);
    if (static_cast<long long>(toks.size()) != cols) {
      throw fail(line_no, "ragged row: expected " + std::to_string(cols) + " values, found " +
                              std::to_string(toks.size()));
    }
    for (long long c = 0; c < cols; ++c) {
      double v = 0.0;
      if (!detail::parse_number(toks[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw fail(line_no, "non-numeric token '" + std::string(toks[static_cast<std::size_t>(c)]) + "'");
      }
      m(r, c) = v;
    }
  }
  if (next_line(line)) throw fail(line_no, "trailing data after " + std::to_string(rows) + " rows");
  return m;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  return parse_matrix(read_file(path), path.string());
}

/// Shortest representation that parses back to the same double.
inline std::string format_matrix(const Matrix& m) {
  std::string out = std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  char buf[64];
  for (Index r = 0; m.cols() > 0 && r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), m(r, c));
      (void)ec;
      if (c > 0) out += ' ';
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  write_file_atomic(path, format_matrix(m));
}

// ---------------------------------------------------------------------------
// Manifest: "key = value" lines, '#' comments, paths relative to the manifest.
//
//   features           d x N_s training features
//   prototypes_seen    k x p
//   prototypes_unseen  k x q
//   labels             1 x N_s seen-class indices, -1 for unknown
//   annotated_mask     1 x N_s, 1 for annotated images
//   attributes         optional k x N_s initial attributes (noisy tags);
//                      otherwise built from labels, mask and prototypes
//   test_features      optional d x N_u unseen-class test features
//   test_labels        optional 1 x N_u indices into prototypes_unseen

struct Manifest {
  std::filesystem::path base;
  std::map<std::string, std::string> entries;

  bool has(const std::string& key) const { return entries.count(key) > 0; }

  std::filesystem::path path(const std::string& key) const {
    const auto it = entries.find(key);
    if (it == entries.end()) throw DataError("manifest: missing key '" + key + "'");
    return base / it->second;
  }
};

inline Manifest parse_manifest(std::string_view text, const std::filesystem::path& base,
                               const std::string& origin = "<manifest>") {
  Manifest mf;
  mf.base = base;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    const auto line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty key or value");
    }
    mf.entries[std::string(key)] = std::string(value);
  }
  return mf;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
  return parse_manifest(read_file(path), path.parent_path(), path.string());
}

inline std::string format_manifest(const std::map<std::string, std::string>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

namespace detail {

inline std::vector<Index> integer_row(const Matrix& m, const std::string& what) {
  if (m.rows() != 1 && m.cols() != 1 && m.size() != 0) {
    throw DataError(what + ": expected a single row or column, got " + shape_str(m));
  }
  std::vector<Index> out(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    if (v != std::round(v)) throw DataError(what + ": entry " + std::to_string(i) + " is not an integer");
    out[static_cast<std::size_t>(i)] = static_cast<Index>(v);
  }
  return out;
}

inline Matrix integer_matrix(const std::vector<Index>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = static_cast<double>(v[i]);
  return m;
}

inline Matrix mask_matrix(const std::vector<bool>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i] ? 1.0 : 0.0;
  return m;
}

}  // namespace detail

/// Class-level initial attributes: prototype of the label for annotated
/// images, zero elsewhere.
inline Matrix initial_attributes(const Matrix& z_s, const std::vector<Index>& labels,
                                 const std::vector<bool>& annotated) {
  Matrix y = Matrix::Zero(z_s.rows(), static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!annotated[i]) continue;
    if (labels[i] == kUnlabeled || labels[i] < 0 || labels[i] >= z_s.cols()) {
      throw DataError("annotated image " + std::to_string(i) + " has no valid seen-class label");
    }
    y.col(static_cast<Index>(i)) = z_s.col(labels[i]);
  }
  return y;
}

inline Dataset load_dataset(const Manifest& mf) {
  Dataset ds;
  ds.X = load_matrix(mf.path("features"));
  ds.Z_s = load_matrix(mf.path("prototypes_seen"));
  ds.Z_u = load_matrix(mf.path("prototypes_unseen"));
  ds.labels = detail::integer_row(load_matrix(mf.path("labels")), "labels");
  const auto mask = detail::integer_row(load_matrix(mf.path("annotated_mask")), "annotated_mask");
  ds.annotated.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0 && mask[i] != 1) throw DataError("annotated_mask: entries must be 0 or 1");
    ds.annotated[i] = mask[i] == 1;
  }
  if (static_cast<Index>(ds.labels.size()) != ds.n() || static_cast<Index>(mask.size()) != ds.n()) {
    throw DataError("manifest: labels/mask length does not match feature count " +
                    std::to_string(ds.n()));
  }
  if (mf.has("attributes")) {
    ds.Y_init = load_matrix(mf.path("attributes"));
    for (Index i = 0; i < ds.Y_init.cols() && i < ds.n(); ++i) {
      if (!ds.annotated[static_cast<std::size_t>(i)]) ds.Y_init.col(i).setZero();
    }
  } else {
    if (ds.Z_s.rows() == 0) throw DataError("prototypes_seen is empty");
    ds.Y_init = initial_attributes(ds.Z_s, ds.labels, ds.annotated);
  }
  ds.validate();
  return ds;
}

inline TestSet load_test_set(const Manifest& mf) {
  TestSet ts;
  ts.X = load_matrix(mf.path("test_features"));
  ts.truth = detail::integer_row(load_matrix(mf.path("test_labels")), "test_labels");
  if (static_cast<Index>(ts.truth.size()) != ts.n()) {
    throw DataError("test_labels length " + std::to_string(ts.truth.size()) +
                    " does not match test_features columns " + std::to_string(ts.n()));
  }
  return ts;
}

/// Writes the dataset (and test set, if given) as matrix files plus
/// manifest.txt in `dir`, which is created if needed. Returns the manifest path.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& ds,
                                          const TestSet* test = nullptr) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> entries{
      {"features", "features.txt"},
      {"prototypes_seen", "prototypes_seen.txt"},
      {"prototypes_unseen", "prototypes_unseen.txt"},
      {"labels", "labels.txt"},
      {"annotated_mask", "annotated_mask.txt"},
  };
  save_matrix(dir / "features.txt", ds.X);
  save_matrix(dir / "prototypes_seen.txt", ds.Z_s);
  save_matrix(dir / "prototypes_unseen.txt", ds.Z_u);
  save_matrix(dir / "labels.txt", detail::integer_matrix(ds.labels));
  save_matrix(dir / "annotated_mask.txt", detail::mask_matrix(ds.annotated));

  // Attributes are stored only when they differ from the class prototypes.
  bool derived = false;
  try {
    derived = initial_attributes(ds.Z_s, ds.labels, ds.annotated) == ds.Y_init;
  } catch (const DataError&) {
  }
  if (!derived) {
    entries["attributes"] = "attributes.txt";
    save_matrix(dir / "attributes.txt", ds.Y_init);
  }
  if (test != nullptr) {
    entries["test_features"] = "test_features.txt";
    entries["test_labels"] = "test_labels.txt";
    save_matrix(dir / "test_features.txt", test->X);
    save_matrix(dir / "test_labels.txt", detail::integer_matrix(test->truth));
  }
  const auto manifest = dir / "manifest.txt";
  write_file_atomic(manifest, format_manifest(entries));
  return manifest;
}

// ---------------------------------------------------------------------------
// Normalization: unit L2 feature columns, unit L1 attribute/prototype columns.

inline Matrix normalize_columns_l2(Matrix x) {
  for (Index i = 0; i < x.cols(); ++i) {
    const double nrm = x.col(i).norm();
    if (!(nrm > 0.0)) throw DataError("normalize: feature column " + std::to_string(i) + " is zero");
    x.col(i) /= nrm;
  }
  return x;
}

/// Zero columns are left untouched.
inline Matrix normalize_columns_l1(Matrix y) {
  for (Index i = 0; i < y.cols(); ++i) {
    const double nrm = y.col(i).lpNorm<1>();
    if (nrm > 0.0) y.col(i) /= nrm;
  }
  return y;
}

inline Dataset normalize(Dataset ds) {
  ds.X = normalize_columns_l2(std::move(ds.X));
  ds.Y_init = normalize_columns_l1(std::move(ds.Y_init));
  ds.Z_s = normalize_columns_l1(std::move(ds.Z_s));
  ds.Z_u = normalize_columns_l1(std::move(ds.Z_u));
  return ds;
}

/// Appends unannotated, unlabeled images (e.g. web images) to the training set.
inline Dataset augment_with_pool(Dataset ds, const Matrix& pool_x) {
  if (pool_x.cols() == 0) return ds;
  if (pool_x.rows() != ds.d()) {
    throw DataError("augment_with_pool: pool has dimension " + std::to_string(pool_x.rows()) +
                    ", dataset has " + std::to_string(ds.d()));
  }
  const Index n0 = ds.n();
  const Index extra = pool_x.cols();
  ds.X.conservativeResize(Eigen::NoChange, n0 + extra);
  ds.X.rightCols(extra) = pool_x;
  ds.Y_init.conservativeResize(Eigen::NoChange, n0 + extra);
  ds.Y_init.rightCols(extra).setZero();
  ds.annotated.resize(static_cast<std::size_t>(n0 + extra), false);
  ds.labels.resize(static_cast<std::size_t>(n0 + extra), kUnlabeled);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data under the bilinear model x ~ W^T z.

struct SyntheticSpec {
  Index d = 16;
  Index k = 10;
  Index p = 8;
  Index q = 4;
  Index images_per_class = 30;
  Index annotated_per_class = 5;
  double noise_std = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (d < 1 || k < 1 || p < 1 || q < 1 || images_per_class < 1) {
      throw ConfigError("synthetic: d, k, p, q and images_per_class must be positive");
    }
    if (annotated_per_class < 0 || annotated_per_class > images_per_class) {
      throw ConfigError("synthetic: annotated_per_class must lie in [0, images_per_class]");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw ConfigError("synthetic: noise_std must be a finite nonnegative number");
    }
  }
};

struct SyntheticData {
  Dataset data;
  TestSet test;  // unseen-class images, truth indexes Z_u
  Matrix W_true;
};

namespace detail {

// Draws image features for class prototype z: W^T z plus isotropic noise,
// L2-normalized.
inline Vector draw_image(const Matrix& w, const Vector& z, double noise_std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector x = w.transpose() * z;
  for (Index i = 0; i < x.size(); ++i) x[i] += noise_std * normal(rng);
  const double nrm = x.norm();
  if (nrm > 0.0) x /= nrm;
  return x;
}

}  // namespace detail

/// Deterministic for a fixed spec. Seen images are laid out class by class;
/// annotated_per_class of each class, chosen at random, carry their
/// prototype as initial attributes. Labels are kept for every seen image
/// (ground truth for the generalized protocol).
inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;

  const Index classes = spec.p + spec.q;
  Matrix z(spec.k, classes);
  auto draw_prototype = [&](Index c) {
    do {
      for (Index a = 0; a < spec.k; ++a) {
        z(a, c) = unif(rng) < 0.5 ? 0.1 + 0.9 * unif(rng) : 0.0;
      }
    } while (z.col(c).isZero(0.0));
    z.col(c) /= z.col(c).lpNorm<1>();
  };
  for (Index c = 0; c < classes; ++c) {
    bool distinct = false;
    for (int attempt = 0; attempt < 1000 && !distinct; ++attempt) {
      draw_prototype(c);
      distinct = true;
      for (Index o = 0; o < c && distinct; ++o) {
        distinct = (z.col(c) - z.col(o)).lpNorm<1>() > 1e-6;
      }
    }
    if (!distinct) throw ConfigError("synthetic: could not draw distinct prototypes (k too small)");
  }

  SyntheticData out;
  out.W_true.resize(spec.k, spec.d);
  for (Index i = 0; i < out.W_true.size(); ++i) out.W_true.data()[i] = normal(rng);
  // Scale so the average clean image W^T z has unit norm.
  double mean_norm = 0.0;
  for (Index c = 0; c < classes; ++c) mean_norm += (out.W_true.transpose() * z.col(c)).norm();
  mean_norm /= static_cast<double>(classes);
  out.W_true /= mean_norm;

  Dataset& ds = out.data;
  ds.Z_s = z.leftCols(spec.p);
  ds.Z_u = z.rightCols(spec.q);
  const Index n = spec.p * spec.images_per_class;
  ds.X.resize(spec.d, n);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.annotated.assign(static_cast<std::size_t>(n), false);
  for (Index c = 0; c < spec.p; ++c) {
    for (Index t = 0; t < spec.images_per_class; ++t) {
      const Index i = c * spec.images_per_class + t;
      ds.X.col(i) = detail::draw_image(out.W_true, ds.Z_s.col(c), spec.noise_std, rng);
      ds.labels[static_cast<std::size_t>(i)] = c;
    }
    std::vector<Index> idx(static_cast<std::size_t>(spec.images_per_class));
    std::iota(idx.begin(), idx.end(), c * spec.images_per_class);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Index t = 0; t < spec.annotated_per_class; ++t) {
      ds.annotated[static_cast<std::size_t>(idx[static_cast<std::size_t>(t)])] = true;
    }
  }
  ds.Y_init = initial_attributes(ds.Z_s, ds.labels, ds.annotated);

  const Index nu = spec.q * spec.images_per_class;
  out.test.X.resize(spec.d, nu);
  out.test.truth.resize(static_cast<std::size_t>(nu));
  for (Index c = 0; c < spec.q; ++c) {
    for (Index t = 0; t < spec.images_per_class; ++t) {
      const Index i = c * spec.images_per_class + t;
      out.test.X.col(i) = detail::draw_image(out.W_true, ds.Z_u.col(c), spec.noise_std, rng);
      out.test.truth[static_cast<std::size_t>(i)] = c;
    }
  }
  return out;
}

/// Unlabeled images drawn from the seen classes (a stand-in for web images
/// retrieved for seen-class queries).
inline Matrix make_synthetic_pool(const SyntheticData& syn, Index count, double noise_std,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, syn.data.p() - 1);
  Matrix pool(syn.data.d(), count);
  for (Index i = 0; i < count; ++i) {
    pool.col(i) = detail::draw_image(syn.W_true, syn.data.Z_s.col(pick(rng)), noise_std, rng);
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Generalized protocol: hold out a fraction of each seen class and mix it with
// the unseen test images.

struct GeneralizedSplit {
  Dataset train;
  TestSet test;  // truth in the joint space: seen c -> c, unseen c -> p + c
  std::vector<Index> train_index;    // into the original dataset
  std::vector<Index> holdout_index;  // into the original dataset
  std::vector<std::string> warnings;
};

inline GeneralizedSplit split_generalized(const Dataset& ds, const TestSet& unseen_test,
                                          double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("split_generalized: fraction must lie in [0, 1)");
  }
  GeneralizedSplit out;
  std::mt19937_64 rng(seed);
  std::vector<bool> held(static_cast<std::size_t>(ds.n()), false);
  for (Index c = 0; c < ds.p(); ++c) {
    std::vector<Index> members;
    for (Index i = 0; i < ds.n(); ++i) {
      if (ds.labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
    }
    if (members.empty()) continue;
    if (members.size() < 2) {
      if (holdout_fraction > 0.0) {
        out.warnings.push_back("class " + std::to_string(c) +
                               " has fewer than 2 images; kept whole in training");
      }
      continue;
    }
    const auto count = static_cast<std::size_t>(
        std::floor(holdout_fraction * static_cast<double>(members.size()) + 1e-9));
    if (count == 0) continue;
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t t = 0; t < count; ++t) held[static_cast<std::size_t>(members[t])] = true;
  }
  for (Index i = 0; i < ds.n(); ++i) {
    (held[static_cast<std::size_t>(i)] ? out.holdout_index : out.train_index).push_back(i);
  }

  const auto ntr = static_cast<Index>(out.train_index.size());
  const auto nho = static_cast<Index>(out.holdout_index.size());
  Dataset& tr = out.train;
  tr.Z_s = ds.Z_s;
  tr.Z_u = ds.Z_u;
  tr.X.resize(ds.d(), ntr);
  tr.Y_init.resize(ds.k(), ntr);
  for (Index t = 0; t < ntr; ++t) {
    const Index i = out.train_index[static_cast<std::size_t>(t)];
    tr.X.col(t) = ds.X.col(i);
    tr.Y_init.col(t) = ds.Y_init.col(i);
    tr.annotated.push_back(ds.annotated[static_cast<std::size_t>(i)]);
    tr.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }

  out.test.X.resize(ds.d(), nho + unseen_test.n());
  for (Index t = 0; t < nho; ++t) {
    const Index i = out.holdout_index[static_cast<std::size_t>(t)];
    out.test.X.col(t) = ds.X.col(i);
    out.test.truth.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  if (unseen_test.n() > 0) out.test.X.rightCols(unseen_test.n()) = unseen_test.X;
  for (Index l : unseen_test.truth) out.test.truth.push_back(ds.p() + l);
  return out;
}

}  // namespace sapzsl
