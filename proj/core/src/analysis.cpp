#include "mesm/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mesm {

namespace {

constexpr double kRankTolerance = 1e-10;

struct RowSpace {
  Eigen::MatrixXd v;  // D x rank, orthonormal columns by descending singular value
};

RowSpace row_space(const Eigen::MatrixXd& m, bool center) {
  Eigen::MatrixXd x = m;
  if (center) x.rowwise() -= x.colwise().mean();
  if (!x.allFinite()) throw std::invalid_argument("subspace: matrix has non-finite entries");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  int rank = 0;
  if (s.size() > 0 && s(0) > 0.0)
    while (rank < s.size() && s(rank) > kRankTolerance * s(0)) ++rank;
  return {svd.matrixV().leftCols(rank)};
}

SubspaceSimilarity similarity(const RowSpace& a, const RowSpace& b, int i) {
  SubspaceSimilarity out;
  out.rank_a = static_cast<int>(a.v.cols());
  out.rank_b = static_cast<int>(b.v.cols());
  const int used = std::min(i, out.rank_a);
  out.padded = used < i;
  if (used > 0 && out.rank_b > 0)
    out.value = (a.v.leftCols(used).transpose() * b.v).squaredNorm() / static_cast<double>(i);
  return out;
}

void check(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("subspace: column counts differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()) + ")");
  if (a.rows() == 0 || b.rows() == 0 || a.cols() == 0) throw std::invalid_argument("subspace: empty matrix");
}

int max_rank(const Eigen::MatrixXd& a) { return static_cast<int>(std::min(a.rows(), a.cols())); }

}  // namespace

SubspaceSimilarity subspace_similarity_detail(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int i,
                                              bool center) {
  check(a, b);
  if (i < 1 || i > max_rank(a))
    throw std::invalid_argument("subspace: i=" + std::to_string(i) + " outside [1, " + std::to_string(max_rank(a)) +
                                "]");
  return similarity(row_space(a, center), row_space(b, center), i);
}

double subspace_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int i, bool center) {
  return subspace_similarity_detail(a, b, i, center).value;
}

std::vector<SubspaceSimilarity> subspace_curve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool center) {
  check(a, b);
  const RowSpace ra = row_space(a, center);
  const RowSpace rb = row_space(b, center);
  std::vector<SubspaceSimilarity> out;
  for (int i = 1; i <= max_rank(a); ++i) out.push_back(similarity(ra, rb, i));
  return out;
}

SubspaceReport subspace_probe(const std::string& qid, const Eigen::MatrixXd& text, const Eigen::MatrixXd& text_enh,
                              const Eigen::MatrixXd& frames, const Eigen::MatrixXd& frames_enh,
                              const FrameIndexSpan& segment, bool center) {
  if (segment.first < 0 || segment.last < segment.first || segment.last >= frames.rows() ||
      frames.rows() != frames_enh.rows())
    throw std::invalid_argument("subspace probe: segment outside the frame range");
  const Eigen::MatrixXd seg = frames.middleRows(segment.first, segment.frame_count());
  const Eigen::MatrixXd seg_enh = frames_enh.middleRows(segment.first, segment.frame_count());
  SubspaceReport report;
  report.qid = qid;
  report.segment = segment;
  const std::pair<const char*, const Eigen::MatrixXd*> texts[] = {{"original", &text}, {"enhanced", &text_enh}};
  const std::pair<const char*, const Eigen::MatrixXd*> videos[] = {{"original", &seg}, {"enhanced", &seg_enh}};
  // Same order as the published figure: (orig, orig), (orig, enh), (enh, orig), (enh, enh).
  for (const auto& [tname, t] : texts) {
    for (const auto& [vname, v] : videos) {
      SubspaceCurve c;
      c.text_variant = tname;
      c.video_variant = vname;
      for (const auto& s : subspace_curve(*t, *v, center)) {
        c.values.push_back(s.value);
        c.padded = c.padded || s.padded;
      }
      report.curves.push_back(std::move(c));
    }
  }
  return report;
}

std::string subspace_report_json(const SubspaceReport& report) {
  nlohmann::ordered_json j;
  j["qid"] = report.qid;
  j["segment"] = {report.segment.first, report.segment.last};
  nlohmann::ordered_json curves = nlohmann::ordered_json::array();
  for (const auto& c : report.curves) {
    nlohmann::ordered_json row;
    row["text"] = c.text_variant;
    row["video"] = c.video_variant;
    row["padded"] = c.padded;
    row["similarity"] = c.values;
    curves.push_back(std::move(row));
  }
  j["curves"] = std::move(curves);
  return j.dump(2);
}

std::string subspace_report_table(const SubspaceReport& report) {
  std::ostringstream out;
  out << "query " << report.qid << ", segment frames " << report.segment.first << ".." << report.segment.last
      << "\n";
  out << "  i";
  for (const auto& c : report.curves) out << "  " << c.text_variant.substr(0, 4) << "/" << c.video_variant.substr(0, 4);
  out << "\n";
  std::size_t rows = 0;
  for (const auto& c : report.curves) rows = std::max(rows, c.values.size());
  char buf[32];
  for (std::size_t i = 0; i < rows; ++i) {
    std::snprintf(buf, sizeof buf, "%3zu", i + 1);
    out << buf;
    for (const auto& c : report.curves) {
      if (i < c.values.size())
        std::snprintf(buf, sizeof buf, "  %9.4f", c.values[i]);
      else
        std::snprintf(buf, sizeof buf, "  %9s", "-");
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace mesm
