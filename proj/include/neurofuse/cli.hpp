#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace neurofuse::cli {

/// Runs one subcommand: phantom, preprocess, split, train, eval, suvr or
/// report. `args` excludes the program name. Returns 0 on success, 1 on a
/// domain error (its error name is printed), 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace neurofuse::cli
