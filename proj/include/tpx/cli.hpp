#pragma once

#include <iosfwd>

namespace tpx {

/// Exit codes: 0 success, 1 serve or tool failure (an aborted request
/// included), 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tpx
