#pragma once

#include <filesystem>
#include <functional>
#include <string>

namespace mcnn {

// Runs `write` against a temporary sibling of `path`, then renames it into
// place. The temporary is removed if `write` throws.
void write_atomically(const std::filesystem::path& path, const std::function<void(const std::filesystem::path&)>& write);

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace mcnn
