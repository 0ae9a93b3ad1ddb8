#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace puzzlegan::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point behind the `puzzlegan` binary. args[0] is the program name.
//
// Subcommands: layout-check, synth-faces, ingest, train, sample, swap,
// influence, eval-regions, fid, replay. Every command that takes --out
// writes resolved_config.json there; `puzzlegan replay <snapshot> --out DIR`
// re-runs it.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace puzzlegan::cli
