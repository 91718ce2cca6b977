#pragma once

namespace cdstraj {

/// Command-line entry point. Returns 0 on success, 1 on usage errors and 2
/// on data, config or contract errors.
int cli_main(int argc, char** argv);

}  // namespace cdstraj
