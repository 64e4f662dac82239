#include "scfc/connectome.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace scfc {
namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& token, std::size_t line_no, std::size_t col_no) {
  const std::string t = trim(token);
  if (t.empty())
    fail(Errc::ParseError, "empty numeric field at line " + std::to_string(line_no) +
                               ", column " + std::to_string(col_no));
  const char* begin = t.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + t.size())
    fail(Errc::ParseError, "bad numeric field '" + t + "' at line " +
                               std::to_string(line_no) + ", column " +
                               std::to_string(col_no));
  return v;
}

}  // namespace

bool is_functional(MatrixKind kind) { return kind != MatrixKind::Structural; }

const char* matrix_kind_name(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::Structural: return "structural";
    case MatrixKind::FunctionalEmpirical: return "functional-empirical";
    case MatrixKind::FunctionalSimulated: return "functional-simulated";
    case MatrixKind::FunctionalPredicted: return "functional-predicted";
  }
  return "unknown";
}

ConnMatrix::ConnMatrix(Mat values, MatrixKind kind) : values_(std::move(values)), kind_(kind) {
  const std::size_t n = values_.rows();
  if (n == 0 || values_.cols() != n)
    fail(Errc::NonSquare, "connectivity matrix must be square and nonempty, got " +
                              std::to_string(values_.rows()) + "x" +
                              std::to_string(values_.cols()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (values_(i, j) + values_(j, i));
      values_(i, j) = m;
      values_(j, i) = m;
    }
  if (is_functional(kind_)) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = values_(i, i);
      if (std::abs(d - 1.0) > kFcDiagTol)
        fail(Errc::RangeViolation, std::string(matrix_kind_name(kind_)) +
                                       " diagonal entry (" + std::to_string(i) + "," +
                                       std::to_string(i) + ") = " + std::to_string(d) +
                                       " is not 1");
      values_(i, i) = 1.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values_(i, j);
        if (!(v >= -1.0 && v <= 1.0))
          fail(Errc::RangeViolation, std::string(matrix_kind_name(kind_)) + " entry (" +
                                         std::to_string(i) + "," + std::to_string(j) +
                                         ") = " + std::to_string(v) +
                                         " outside [-1, 1]");
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (values_(i, i) != 0.0)
        fail(Errc::RangeViolation, "structural diagonal entry (" + std::to_string(i) +
                                       "," + std::to_string(i) + ") = " +
                                       std::to_string(values_(i, i)) + " is not 0");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values_(i, j);
        if (!(v >= 0.0))
          fail(Errc::RangeViolation, "structural entry (" + std::to_string(i) + "," +
                                         std::to_string(j) + ") = " + std::to_string(v) +
                                         " is negative");
      }
    }
  }
}

std::vector<int> Cohort::labels() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.label);
  return out;
}

ConnMatrix load_matrix(const fs::path& path, MatrixKind kind) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open '" + path.string() + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto tokens = split(line, ',');
    std::vector<double> row;
    row.reserve(tokens.size());
    for (std::size_t c = 0; c < tokens.size(); ++c)
      row.push_back(parse_double(tokens[c], line_no, c + 1));
    rows.push_back(std::move(row));
  }
  if (in.bad()) fail(Errc::Io, "read failure on '" + path.string() + "'");
  if (rows.empty()) fail(Errc::ParseError, "'" + path.string() + "' holds no matrix rows");
  const std::size_t n = rows.size();
  for (std::size_t r = 0; r < n; ++r)
    if (rows[r].size() != n)
      fail(Errc::NonSquare, "'" + path.string() + "': row " + std::to_string(r + 1) +
                                " has " + std::to_string(rows[r].size()) +
                                " columns, expected " + std::to_string(n));
  Mat m(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) m(r, c) = rows[r][c];
  double max_asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      max_asym = std::max(max_asym, std::abs(m(i, j) - m(j, i)));
  if (max_asym > kLoadAsymmetryTol)
    fail(Errc::AsymmetryExceeded, "'" + path.string() + "': max |a_ij - a_ji| = " +
                                      std::to_string(max_asym) + " exceeds tolerance");
  return ConnMatrix(std::move(m), kind);
}

void save_matrix(const ConnMatrix& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot open '" + path.string() + "' for writing");
  const Mat& v = m.values();
  char buf[40];
  std::string line;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    line.clear();
    for (std::size_t c = 0; c < v.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.16e", v(r, c));
      if (c) line.push_back(',');
      line += buf;
    }
    line.push_back('\n');
    out << line;
  }
  out.flush();
  if (!out) fail(Errc::Io, "write failure on '" + path.string() + "'");
}

Cohort load_cohort(const fs::path& manifest_path, std::uint64_t base_seed) {
  std::ifstream in(manifest_path);
  if (!in) fail(Errc::Io, "cannot open manifest '" + manifest_path.string() + "'");
  const fs::path base_dir = manifest_path.has_parent_path()
                                ? manifest_path.parent_path()
                                : fs::path(".");
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  };

  Cohort cohort;
  cohort.base_seed = base_seed;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = split(t, ',');
    if (fields.size() != 4)
      fail(Errc::ManifestParse, "manifest line " + std::to_string(line_no) + " has " +
                                    std::to_string(fields.size()) +
                                    " fields, expected 4");
    const std::string id = trim(fields[0]);
    const std::string sc_path = trim(fields[1]);
    const std::string fc_path = trim(fields[2]);
    const std::string label_str = trim(fields[3]);
    if (id.empty())
      fail(Errc::ManifestParse, "manifest line " + std::to_string(line_no) +
                                    " has an empty subject id");
    if (!seen_ids.insert(id).second)
      fail(Errc::DuplicateSubjectId, "subject id '" + id + "' appears more than once");
    int label;
    if (label_str == "0")
      label = 0;
    else if (label_str == "1")
      label = 1;
    else
      fail(Errc::LabelNotBinary, "subject '" + id + "' has label '" + label_str +
                                     "'; labels must be 0 or 1");
    ConnMatrix sc = load_matrix(resolve(sc_path), MatrixKind::Structural);
    std::optional<ConnMatrix> fc;
    if (fc_path != "-")
      fc = load_matrix(resolve(fc_path), MatrixKind::FunctionalEmpirical);
    if (fc && fc->n_rois() != sc.n_rois())
      fail(Errc::InconsistentRoiCount, "subject '" + id + "': SC has " +
                                           std::to_string(sc.n_rois()) + " ROIs, FC has " +
                                           std::to_string(fc->n_rois()));
    if (cohort.subjects.empty()) {
      cohort.n_rois = sc.n_rois();
    } else if (sc.n_rois() != cohort.n_rois) {
      fail(Errc::InconsistentRoiCount, "subject '" + id + "' has " +
                                           std::to_string(sc.n_rois()) +
                                           " ROIs, cohort has " +
                                           std::to_string(cohort.n_rois));
    }
    cohort.subjects.push_back(SubjectRecord{id, std::move(sc), std::move(fc), label});
  }
  if (in.bad()) fail(Errc::Io, "read failure on '" + manifest_path.string() + "'");
  return cohort;
}

}  // namespace scfc
