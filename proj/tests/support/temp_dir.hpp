#ifndef DEMUX_TESTS_TEMP_DIR_HPP
#define DEMUX_TESTS_TEMP_DIR_HPP

#include <unistd.h>

#include <filesystem>
#include <string>

namespace demux::oracle {

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("demux-" + tag + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace demux::oracle

#endif  // DEMUX_TESTS_TEMP_DIR_HPP
