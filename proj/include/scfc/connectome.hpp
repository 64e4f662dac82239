#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scfc/matrix.hpp"

namespace scfc {

enum class MatrixKind {
  Structural,             // fiber counts; nonnegative, zero diagonal
  FunctionalEmpirical,    // correlations; [-1, 1], unit diagonal
  FunctionalSimulated,
  FunctionalPredicted,
};

bool is_functional(MatrixKind kind);
const char* matrix_kind_name(MatrixKind kind);

// asymmetry tolerated when loading from disk before symmetrization
inline constexpr double kLoadAsymmetryTol = 1e-9;
// functional diagonals within this of 1 are snapped to exactly 1
inline constexpr double kFcDiagTol = 1e-6;

// Square symmetric connectivity matrix. Construction symmetrizes via
// (M + M^T)/2 and then enforces the kind's invariants:
//   Structural: entries >= 0 and zero diagonal.
//   Functional: entries in [-1, 1] and diagonal exactly 1 (snapped within
//   kFcDiagTol, rejected beyond it).
class ConnMatrix {
 public:
  ConnMatrix(Mat values, MatrixKind kind);

  std::size_t n_rois() const { return values_.rows(); }
  const Mat& values() const { return values_; }
  MatrixKind kind() const { return kind_; }
  bool functional() const { return is_functional(kind_); }

 private:
  Mat values_;
  MatrixKind kind_;
};

struct SubjectRecord {
  std::string subject_id;
  ConnMatrix sc;
  std::optional<ConnMatrix> fc_empirical;
  int label = 0;  // 0 control, 1 patient
};

struct Cohort {
  std::vector<SubjectRecord> subjects;
  std::size_t n_rois = 0;
  std::uint64_t base_seed = 0;

  std::size_t size() const { return subjects.size(); }
  std::vector<int> labels() const;
};

// CSV with one row per line, comma-separated, written as %.16e so that a
// save/load round trip is bit-exact. Loading rejects non-square content,
// asymmetry beyond kLoadAsymmetryTol, and anything the kind's validation
// rejects.
ConnMatrix load_matrix(const std::filesystem::path& path, MatrixKind kind);
void save_matrix(const ConnMatrix& m, const std::filesystem::path& path);

// Manifest: one "subject_id,sc_path,fc_path,label" line per subject, where
// fc_path may be "-" for subjects without an empirical FC and label is 0 or 1.
// Blank lines and lines starting with '#' are skipped. Relative paths resolve
// against the manifest's directory.
Cohort load_cohort(const std::filesystem::path& manifest_path,
                   std::uint64_t base_seed = 0);

}  // namespace scfc
