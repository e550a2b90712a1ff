#include "manifest.h"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <ctime>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace clozerec::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 0xf];
  }
  return hex;
}

RunManifest::RunManifest(std::string command, std::filesystem::path out_dir)
    : command_(std::move(command)),
      out_dir_(std::move(out_dir)),
      started_wall_(std::chrono::system_clock::now()),
      started_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path) {
  auto record = [&](const std::filesystem::path& file) {
    inputs_.push_back({{"path", file.string()},
                       {"sha256", sha256_file(file)},
                       {"bytes", std::filesystem::file_size(file)}});
  };
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) record(f);
  } else {
    record(path);
  }
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs_.push_back(std::filesystem::relative(path, out_dir_).generic_string());
}

nlohmann::json RunManifest::to_json() const {
  const auto elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  const std::time_t t = std::chrono::system_clock::to_time_t(started_wall_);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  nlohmann::json j = {
      {"command", command_},
      {"config", config_},
      {"seed", seed_},
      {"inputs", inputs_},
      {"outputs", outputs_},
      {"timing", {{"started_at", stamp}, {"seconds", elapsed}}},
  };
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  return j;
}

std::filesystem::path RunManifest::write() const {
  std::filesystem::create_directories(out_dir_);
  const auto path = out_dir_ / "manifest.json";
  std::ofstream out(path);
  out << to_json().dump(2) << '\n';
  if (!out) throw std::runtime_error("failed to write " + path.string());
  return path;
}

}  // namespace clozerec::cli
