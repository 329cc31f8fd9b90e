#pragma once

#include <functional>
#include <string_view>

namespace speechconf {

/// Process-wide warning sink. Defaults to one `warning: ...` line on stderr.
using WarningSink = std::function<void(std::string_view)>;

void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace speechconf
