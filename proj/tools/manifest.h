#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace clozerec::cli {

std::string sha256_file(const std::filesystem::path& path);

// Record of one command invocation, written as manifest.json in the output directory.
class RunManifest {
 public:
  RunManifest(std::string command, std::filesystem::path out_dir);

  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  // Files are digested; directories contribute every regular file inside them.
  void add_input(const std::filesystem::path& path);
  // Paths are stored relative to the output directory.
  void add_output(const std::filesystem::path& path);
  nlohmann::json& extra() { return extra_; }

  const std::filesystem::path& out_dir() const { return out_dir_; }
  const std::vector<std::string>& outputs() const { return outputs_; }

  nlohmann::json to_json() const;
  std::filesystem::path write() const;

 private:
  std::string command_;
  std::filesystem::path out_dir_;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  nlohmann::json inputs_ = nlohmann::json::array();
  std::vector<std::string> outputs_;
  nlohmann::json extra_ = nlohmann::json::object();
  std::chrono::system_clock::time_point started_wall_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace clozerec::cli
