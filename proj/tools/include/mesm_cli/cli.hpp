#pragma once

// The `mesm` command line. run() is the whole program; main() only forwards.
//
//   mesm synth    --out DIR [--preset small|memorization|generalization] [--videos N ...]
//   mesm train    --data TRAIN.jsonl [--val VAL.jsonl] --out DIR [--config F] [--set k=v]...
//   mesm eval     --checkpoint CKPT --data M.jsonl [--out DIR]
//   mesm ablate   --data TRAIN.jsonl --val VAL.jsonl --out DIR [--grid main|mlm|ss-layers]
//   mesm probe    --checkpoint CKPT --data M.jsonl [--qid Q] [--out DIR]
//   mesm selftest [--full] [--out DIR]
//
// Exit codes: 0 success, 1 invalid input or failed check, 2 training hit a
// non-finite loss.

#include <ostream>
#include <string>
#include <vector>

#include "mesm/metrics.hpp"

namespace mesm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNonFinite = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// R1@0.5, R1@0.7, mIoU and mAP_avg in percent, one row per label.
std::string metric_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace mesm::cli
