#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace finpilot {

// Entry point shared by the finpilot executable and tests. Returns the
// process exit code; failures print one line "error: <kind>: <message>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Applies one sweep override such as "r2=0.001,0.3" or "variant=vanilla".
struct ExperimentConfig;
void apply_axis(ExperimentConfig& config, const std::string& axis);

}  // namespace finpilot
