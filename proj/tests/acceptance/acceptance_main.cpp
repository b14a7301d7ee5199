// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
//
//   mesm_acceptance [--only 1,5,11] [--work-dir DIR] [--quiet]

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include "mesm_checks/criteria.hpp"

int main(int argc, char** argv) {
  using namespace mesm::checks;
  std::vector<int> ids;
  AcceptanceOptions options;
  options.log = &std::cerr;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::istringstream list(argv[++i]);
      for (std::string tok; std::getline(list, tok, ',');) ids.push_back(std::stoi(tok));
    } else if (arg == "--work-dir" && i + 1 < argc) {
      options.work_dir = argv[++i];
    } else if (arg == "--quiet") {
      options.log = nullptr;
    } else {
      std::cerr << "usage: " << argv[0] << " [--only 1,2,...] [--work-dir DIR] [--quiet]\n";
      return 1;
    }
  }
  if (ids.empty())
    for (int id = 1; id <= 11; ++id) ids.push_back(id);

  int failed = 0;
  for (int id : ids) {
    const CriterionResult r = run_criterion(id, options);
    std::cout << format_result(r) << std::endl;
    failed += r.passed ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
