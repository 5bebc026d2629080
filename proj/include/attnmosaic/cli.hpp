// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace attnmosaic::cli {

/// Runs one command. `args` excludes the program name. Normal output goes to
/// `out`; diagnostics go to `err` as "error[E_CODE]: message". Returns the
/// process exit status: 0 on success, 2 for usage errors, 1 otherwise.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attnmosaic::cli
