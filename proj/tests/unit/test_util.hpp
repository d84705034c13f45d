#ifndef MORLAIF_TESTS_TEST_UTIL_HPP_
#define MORLAIF_TESTS_TEST_UTIL_HPP_

#include <filesystem>
#include <random>
#include <string>

#include "morlaif/synthetic_env.hpp"

namespace morlaif::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("morlaif_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline WorldConfig small_world_config(int n = 3, int d = 6, int prompts = 8, int templates = 5) {
  WorldConfig c;
  c.n_principles = n;
  c.feature_dim = d;
  c.n_prompts = prompts;
  c.n_templates = templates;
  c.sycophancy_mode = false;
  return c;
}

}  // namespace morlaif::testing

#endif  // MORLAIF_TESTS_TEST_UTIL_HPP_
