#pragma once

namespace apnt {

/// Entry point of the `apnt` tool; returns the process exit status.
int run_cli(int argc, const char* const* argv);

}  // namespace apnt
