#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mmqss/core.hpp"

namespace mmqss::cli {

struct Preset {
    std::string name;
    RateParameters params;
    std::optional<double> t_end;  ///< horizon used by the source figure, if any
    std::string notes;
};

const std::vector<Preset>& presets();
/// Throws InvalidParameters for an unknown name.
const Preset& preset(const std::string& name);

/// Runs one `mmqss` invocation; `args` excludes the program name.
/// Returns 0 on success, 1 on a runtime error (one `error: <Code>: message`
/// line on `err`) and 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace mmqss::cli
