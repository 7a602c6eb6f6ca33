#pragma once

#include <functional>
#include <string>

namespace lungsc {

// Warnings go through a replaceable sink so tests can capture them and the
// CLI can route them to stderr. Parsing keeps going after a warning.
using WarnSink = std::function<void(const std::string&)>;

void set_warn_sink(WarnSink sink);
void warn(const std::string& msg);

}  // namespace lungsc
