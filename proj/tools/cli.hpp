#pragma once

// Command-line front end. Exit codes: 0 success, 1 I/O failure, 2 validation
// or usage error.

namespace ipsw::cli {

int run(int argc, const char* const* argv);

}  // namespace ipsw::cli
