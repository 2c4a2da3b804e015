#pragma once

#include <string>
#include <string_view>

namespace entcap {

std::string sha256_hex(std::string_view bytes);

}  // namespace entcap
