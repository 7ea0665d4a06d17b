#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace halludetect {

std::string_view Trim(std::string_view s);
std::string_view TrimRight(std::string_view s);
std::string ToLowerAscii(std::string_view s);
std::vector<std::string_view> SplitWhitespace(std::string_view s);

std::string ReadFile(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over the target.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace halludetect
