#pragma once

#include <iosfwd>

namespace tgsr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `tgsr` tool. Subcommands: gen-data, pretrain, train,
/// eval, infer, probe, serve. Returns the process exit code; failures print a
/// single machine-parsable line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tgsr
