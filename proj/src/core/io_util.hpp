#pragma once

#include <string>
#include <vector>

namespace mocap {

// All of these throw Error(Io) on failure.
std::string read_text_file(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);
void write_binary_file(const std::string& path, const std::string& header, const void* data, size_t bytes);
void ensure_directory(const std::string& path);

}  // namespace mocap
