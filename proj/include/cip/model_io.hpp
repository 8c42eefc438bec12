#pragma once

#include <filesystem>
#include <string>

#include "cip/model.hpp"

namespace cip {

inline constexpr int kModelFormatVersion = 1;

std::string serialize_model(const ModelWeights &w);
ModelWeights parse_model(const std::string &text);

// Atomic write (temp file + rename).
void write_model(const std::filesystem::path &path, const ModelWeights &w);
ModelWeights read_model(const std::filesystem::path &path);

// Peeks at the "model_type" field: "float" or "integer".
std::string model_file_type(const std::filesystem::path &path);

void atomic_write_file(const std::filesystem::path &path,
                       const std::string &content);

} // namespace cip
