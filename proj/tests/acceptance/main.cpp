// Acceptance driver: one PASS/FAIL line per criterion.
//   acceptance [name ...]   (all criteria when no names are given)
//   acceptance --list

#include "acceptance/criteria.hpp"

#include <iostream>
#include <sstream>

int main(int argc, char** argv) {
  std::vector<std::string> names;
  bool verbose = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const auto& c : acceptance::criteria()) std::cout << c.name << "  " << c.summary << "\n";
      return 0;
    }
    if (arg == "-v" || arg == "--verbose") {
      verbose = true;
      continue;
    }
    names.push_back(arg);
  }
  if (names.empty())
    for (const auto& c : acceptance::criteria()) names.push_back(c.name);

  bool all = true;
  for (const auto& name : names) {
    std::ostringstream log;
    acceptance::Outcome out;
    try {
      out = acceptance::run_criterion(name, verbose ? std::cerr : log);
    } catch (const std::out_of_range& e) {
      std::cerr << e.what() << "\n";
      return 2;
    }
    std::cout << acceptance::format_line(name, out) << std::endl;
    if (!out.pass && !verbose) std::cout << log.str();
    all = all && out.pass;
  }
  return all ? 0 : 1;
}
