#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace toolwatch {

std::array<std::uint8_t, 16> md5(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);
std::string to_hex(const std::uint8_t* data, std::size_t n);

}  // namespace toolwatch
