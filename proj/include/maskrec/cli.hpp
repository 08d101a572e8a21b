#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maskrec::cli {

/// Exit codes: 0 success, 2 config or usage error, 3 data / io / format
/// error, 4 numeric error.
enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

/// Runs one subcommand (synth, pretrain, finetune, eval, sweep).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maskrec::cli
