#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "clozerec/backend.h"
#include "clozerec/corpus.h"
#include "clozerec/synthetic.h"
#include "clozerec/training.h"

namespace fixtures {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("clozerec-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

// A small synthetic corpus held in memory.
struct SmallCorpus {
  clozerec::corpus::NewsCatalog catalog;
  std::vector<clozerec::corpus::ImpressionRecord> impressions;

  explicit SmallCorpus(std::size_t n = 40, std::uint64_t seed = 3) {
    clozerec::synthetic::SyntheticConfig c;
    c.impressions = n;
    c.seed = seed;
    auto generated = clozerec::synthetic::generate(c);
    for (auto& a : generated.news) catalog.insert(a);
    impressions = std::move(generated.impressions);
  }
};

inline clozerec::backend::ModelHandle tiny_model(const std::vector<clozerec::corpus::Sample>& samples,
                                                 std::uint64_t seed = 11,
                                                 const std::string& preset = "tiny-mlm") {
  return clozerec::backend::create_model(
      preset, clozerec::training::vocabulary_words({&samples}, clozerec::prompting::builtin_templates()),
      seed);
}

}  // namespace fixtures

