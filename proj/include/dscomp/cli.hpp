#pragma once

namespace dscomp {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Entry point of the dscomp tool: gen, train, sample, ablate, conlab, curate, metrics.
int run_cli(int argc, char** argv);

}  // namespace dscomp
