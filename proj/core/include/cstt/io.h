#ifndef CSTT_IO_H_
#define CSTT_IO_H_

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cstt/autograd.h"

namespace cstt::io {

// Lower-case hex SHA-256.
std::string Sha256Hex(std::string_view data);
std::string Sha256File(const std::string& path);

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view data);

// Feature file: "CSTF", uint32 frames, uint32 width, then frames * width
// little-endian float32 values, row-major.
void WriteFeatures(const std::string& path, const ag::Matrix& features);
ag::Matrix ReadFeatures(const std::string& path);
// Bytes WriteFeatures would produce.
std::string EncodeFeatures(const ag::Matrix& features);

// One JSON object per line.
std::vector<nlohmann::json> ReadJsonLines(const std::string& path);
void WriteJsonLines(const std::string& path,
                    const std::vector<nlohmann::json>& records);

}  // namespace cstt::io

#endif  // CSTT_IO_H_
