#include "cstt/io.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

namespace cstt::io {

namespace {

constexpr char kFeatureMagic[4] = {'C', 'S', 'T', 'F'};

static_assert(std::endian::native == std::endian::little,
              "feature I/O assumes a little-endian host");

void AppendU32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

}  // namespace

std::string Sha256Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string Sha256File(const std::string& path) {
  return Sha256Hex(ReadFile(path));
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("error writing " + path);
}

std::string EncodeFeatures(const ag::Matrix& features) {
  std::string out(kFeatureMagic, sizeof(kFeatureMagic));
  AppendU32(out, static_cast<std::uint32_t>(features.rows()));
  AppendU32(out, static_cast<std::uint32_t>(features.cols()));
  out.reserve(out.size() + features.size() * sizeof(float));
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    const float f = static_cast<float>(features.data()[i]);
    char buf[sizeof(float)];
    std::memcpy(buf, &f, sizeof(f));
    out.append(buf, sizeof(buf));
  }
  return out;
}

void WriteFeatures(const std::string& path, const ag::Matrix& features) {
  WriteFile(path, EncodeFeatures(features));
}

ag::Matrix ReadFeatures(const std::string& path) {
  const std::string bytes = ReadFile(path);
  if (bytes.size() < 12 ||
      std::memcmp(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
    throw std::runtime_error(path + " is not a feature file");
  }
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::memcpy(&rows, bytes.data() + 4, 4);
  std::memcpy(&cols, bytes.data() + 8, 4);
  const std::size_t expected =
      12 + static_cast<std::size_t>(rows) * cols * sizeof(float);
  if (bytes.size() != expected) {
    throw std::runtime_error(path + ": size " + std::to_string(bytes.size()) +
                             " does not match header (" +
                             std::to_string(expected) + ")");
  }
  ag::Matrix m(rows, cols);
  const char* p = bytes.data() + 12;
  for (Eigen::Index i = 0; i < m.size(); ++i, p += sizeof(float)) {
    float f;
    std::memcpy(&f, p, sizeof(f));
    m.data()[i] = f;
  }
  return m;
}

std::vector<nlohmann::json> ReadJsonLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_number) +
                               ": " + e.what());
    }
  }
  return out;
}

void WriteJsonLines(const std::string& path,
                    const std::vector<nlohmann::json>& records) {
  std::string data;
  for (const auto& r : records) {
    data += r.dump();
    data += '\n';
  }
  WriteFile(path, data);
}

}  // namespace cstt::io
