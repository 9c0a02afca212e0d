#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pulsemap {

/// Runs one subcommand (transform, render, synth, pretrain, finetune, eval).
/// `args` excludes the program name. Returns 0 on success, 1 when a library
/// error is raised (its kind is printed to `err`), 2 on usage errors.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pulsemap
