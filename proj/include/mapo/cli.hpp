#pragma once

// Command-line front end. Subcommands:
//   gen-data <config> [--force]
//   warmup <config> [--epochs N]
//   train-mapo <config> --from <ckpt> [--strategy S...] [--baseline]
//   ablate-tau <config> [--taus T...] [--from <ckpt>]
//   eval <ckpt> <dataset-dir> [--split S] [--out file]
//   variance-map <ckpt> <dataset-dir> --sample ID --out file.pgm [--strategy S] [--seed N]
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime or data error.

#include <ostream>
#include <span>
#include <string>

namespace mapo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace mapo::cli
