#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace flowforge::nn {

// Weight blob: named double arrays, shapes live in the owning manifest.
void save_weights(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::vector<double>>>& entries);

std::map<std::string, std::vector<double>> load_weights(const std::filesystem::path& path);

}  // namespace flowforge::nn
