#pragma once

// Subspace similarity between row spaces of two feature matrices.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mesm/span.hpp"

namespace mesm {

struct SubspaceSimilarity {
  double value = 0.0;
  int rank_a = 0;
  int rank_b = 0;
  bool padded = false;  // i exceeded rank(A); missing directions count as zero
};

/// ||V_A[:, :i]^T V_B||_F^2 / i with V the right singular vectors. B keeps
/// every direction whose singular value exceeds 1e-10 of its largest.
/// Requires 1 <= i <= min(rows(A), cols(A)) and equal column counts.
SubspaceSimilarity subspace_similarity_detail(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int i,
                                              bool center = false);

double subspace_similarity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int i, bool center = false);

/// Similarity for i = 1..min(rows(A), cols(A)).
std::vector<SubspaceSimilarity> subspace_curve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                               bool center = false);

struct SubspaceCurve {
  std::string text_variant;   // "original" or "enhanced"
  std::string video_variant;  // "original" or "enhanced"
  std::vector<double> values;
  bool padded = false;
};

struct SubspaceReport {
  std::string qid;
  FrameIndexSpan segment;
  std::vector<SubspaceCurve> curves;
};

/// The four text/segment pairings. Segment rows first..last of each frame
/// matrix are used.
SubspaceReport subspace_probe(const std::string& qid, const Eigen::MatrixXd& text, const Eigen::MatrixXd& text_enh,
                              const Eigen::MatrixXd& frames, const Eigen::MatrixXd& frames_enh,
                              const FrameIndexSpan& segment, bool center = false);

std::string subspace_report_json(const SubspaceReport& report);
std::string subspace_report_table(const SubspaceReport& report);

}  // namespace mesm
