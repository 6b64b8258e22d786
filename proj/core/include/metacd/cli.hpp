#pragma once

namespace metacd {

/// Whole command-line surface of the metacd tool. Exit codes: 0 success,
/// 1 usage or configuration error, 2 runtime/training error.
int cli_main(int argc, char** argv);

}  // namespace metacd
