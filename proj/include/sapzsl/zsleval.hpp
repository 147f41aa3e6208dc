#pragma once

// Nearest-prototype prediction in feature space and ZSL metrics.

#include <sapzsl/core.hpp>
#include <sapzsl/dataio.hpp>

#include <nlohmann/json.hpp>

#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sapzsl {

/// label_i = argmin_j ||x_i - W^T z_j||^2, ties to the lowest j.
inline std::vector<Index> predict(const Matrix& w, const Matrix& x_test, const Matrix& z) {
  if (z.cols() == 0) throw DataError("predict: no class prototypes");
  if (w.rows() != z.rows() || w.cols() != x_test.rows()) {
    throw DataError("predict: W is " + shape_str(w) + ", features are " + shape_str(x_test) +
                    ", prototypes are " + shape_str(z));
  }
  const Matrix recon = w.transpose() * z;  // d x classes
  std::vector<Index> labels(static_cast<std::size_t>(x_test.cols()));
  for (Index i = 0; i < x_test.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index arg = 0;
    for (Index j = 0; j < recon.cols(); ++j) {
      const double dist = (x_test.col(i) - recon.col(j)).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
  }
  return labels;
}

inline double harmonic_mean(double a, double b) {
  return (a > 0.0 && b > 0.0) ? 2.0 * a * b / (a + b) : 0.0;
}

struct EvalReport {
  double per_sample_accuracy = 0.0;
  double per_class_accuracy = 0.0;
  std::optional<double> acc_u;
  std::optional<double> acc_s;
  double harmonic_mean = 0.0;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["per_sample_accuracy"] = r.per_sample_accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["acc_u"] = r.acc_u ? nlohmann::json(*r.acc_u) : nlohmann::json(nullptr);
  j["acc_s"] = r.acc_s ? nlohmann::json(*r.acc_s) : nlohmann::json(nullptr);
  j["harmonic_mean"] = r.harmonic_mean;
  return j;
}

namespace detail {

struct Accuracies {
  double per_sample = 0.0;
  double per_class = 0.0;
  Index count = 0;
};

// Accuracy over the samples whose truth satisfies `keep`; per-class mean over
// classes that actually occur.
template <typename Keep>
Accuracies accuracies(const std::vector<Index>& labels, const std::vector<Index>& truth,
                      Keep keep) {
  std::map<Index, std::pair<Index, Index>> per_class;  // class -> (correct, total)
  Accuracies a;
  Index correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!keep(truth[i])) continue;
    const bool ok = labels[i] == truth[i];
    auto& [c, t] = per_class[truth[i]];
    c += ok;
    ++t;
    correct += ok;
    ++a.count;
  }
  if (a.count == 0) return a;
  a.per_sample = static_cast<double>(correct) / static_cast<double>(a.count);
  double sum = 0.0;
  for (const auto& [cls, ct] : per_class) {
    sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  a.per_class = sum / static_cast<double>(per_class.size());
  return a;
}

}  // namespace detail

/// Standard multi-way accuracy, per sample and as the mean of per-class
/// accuracies. Classes absent from `truth` do not enter the mean.
inline EvalReport evaluate_standard(const std::vector<Index>& labels,
                                    const std::vector<Index>& truth, Index class_count) {
  if (labels.size() != truth.size()) {
    throw DataError("evaluate: " + std::to_string(labels.size()) + " predictions for " +
                    std::to_string(truth.size()) + " ground-truth labels");
  }
  for (Index t : truth) {
    if (t < 0 || t >= class_count) throw DataError("evaluate: truth label out of range");
  }
  const auto a = detail::accuracies(labels, truth, [](Index) { return true; });
  EvalReport r;
  r.per_sample_accuracy = a.per_sample;
  r.per_class_accuracy = a.per_class;
  return r;
}

/// Generalized protocol: predictions range over [Z_s Z_u]; truth uses the
/// joint index space (seen classes first). acc_u / acc_s are per-class mean
/// accuracies over unseen / seen truth.
inline EvalReport evaluate_generalized(const Matrix& w, const Matrix& x_test,
                                       const std::vector<Index>& truth, const Matrix& z_joint,
                                       const std::set<Index>& seen_classes) {
  const auto labels = predict(w, x_test, z_joint);
  EvalReport r = evaluate_standard(labels, truth, z_joint.cols());
  auto is_seen = [&](Index c) { return seen_classes.count(c) > 0; };
  const auto u = detail::accuracies(labels, truth, [&](Index c) { return !is_seen(c); });
  const auto s = detail::accuracies(labels, truth, is_seen);
  if (u.count > 0) r.acc_u = u.per_class;
  else r.warnings.push_back("no unseen-class test samples; acc_u undefined");
  if (s.count > 0) r.acc_s = s.per_class;
  else r.warnings.push_back("no seen-class test samples; acc_s undefined");
  r.harmonic_mean = (r.acc_u && r.acc_s) ? harmonic_mean(*r.acc_u, *r.acc_s) : 0.0;
  return r;
}

/// Seen classes of a joint label space with p seen classes first.
inline std::set<Index> first_classes(Index p) {
  std::set<Index> s;
  for (Index c = 0; c < p; ++c) s.insert(c);
  return s;
}

}  // namespace sapzsl
