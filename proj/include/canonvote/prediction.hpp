#pragma once

#include <string>
#include <vector>

#include "canonvote/common.hpp"

namespace canonvote {

/// Per-point network outputs: canonical coordinate, box scale, objectness and
/// class distribution. Produced here by the oracle.
struct PredictionField {
  std::vector<Vec3> lcc;
  std::vector<Vec3> scale;
  std::vector<double> objectness;
  /// Row-major N x num_classes.
  std::vector<double> class_scores;
  int num_classes = 1;

  std::size_t size() const { return lcc.size(); }

  const double* class_row(std::size_t i) const {
    return class_scores.data() + i * static_cast<std::size_t>(num_classes);
  }

  /// Argmax of the class distribution; ties go to the smaller id.
  int predicted_class(std::size_t i) const {
    const double* row = class_row(i);
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    return best;
  }

  void reserve(std::size_t n) {
    lcc.reserve(n);
    scale.reserve(n);
    objectness.reserve(n);
    class_scores.reserve(n * static_cast<std::size_t>(num_classes));
  }

  void push_back(const Vec3& p_lcc, const Vec3& s, double o, const std::vector<double>& scores) {
    lcc.push_back(p_lcc);
    scale.push_back(s);
    objectness.push_back(o);
    class_scores.insert(class_scores.end(), scores.begin(), scores.end());
  }

  /// Checks array lengths and value ranges; throws InputError.
  void validate() const {
    const std::size_t n = lcc.size();
    if (num_classes < 1) throw InputError("PredictionField: num_classes must be >= 1");
    if (scale.size() != n || objectness.size() != n ||
        class_scores.size() != n * static_cast<std::size_t>(num_classes)) {
      throw InputError("PredictionField: per-point arrays have mismatched lengths");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!lcc[i].allFinite() || !scale[i].allFinite()) {
        throw InputError("PredictionField: non-finite value at point " + std::to_string(i));
      }
      if ((scale[i].array() < 0.0).any()) {
        throw InputError("PredictionField: negative scale at point " + std::to_string(i));
      }
      const double o = objectness[i];
      if (!(o >= 0.0 && o <= 1.0)) {
        throw InputError("PredictionField: objectness outside [0,1] at point " + std::to_string(i));
      }
      double sum = 0.0;
      const double* row = class_row(i);
      for (int c = 0; c < num_classes; ++c) {
        if (!(row[c] >= 0.0)) {
          throw InputError("PredictionField: negative class score at point " + std::to_string(i));
        }
        sum += row[c];
      }
      if (std::fabs(sum - 1.0) > 1e-6) {
        throw InputError("PredictionField: class scores do not sum to 1 at point " +
                         std::to_string(i));
      }
    }
  }
};

/// One-hot class distribution.
inline std::vector<double> one_hot(int class_id, int num_classes) {
  std::vector<double> v(static_cast<std::size_t>(num_classes), 0.0);
  v.at(static_cast<std::size_t>(class_id)) = 1.0;
  return v;
}

}  // namespace canonvote
