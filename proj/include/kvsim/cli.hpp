#pragma once

namespace kvsim {

// Full command-line front end. Returns the process exit code:
// 0 success, 2 usage error, 3 configuration error, 4 runtime failure.
int run_cli(int argc, char** argv);

}  // namespace kvsim
