#pragma once

#include "json.hpp"

namespace thinkact {

// Insertion-ordered JSON keeps on-disk records in their documented key order.
using Json = nlohmann::ordered_json;

}  // namespace thinkact
