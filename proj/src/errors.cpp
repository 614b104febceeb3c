#include "finpilot/errors.h"

#include <utility>

namespace finpilot {

Error::Error(std::string kind, const std::string& message)
    : std::runtime_error(message), kind_(std::move(kind)) {}

}  // namespace finpilot
