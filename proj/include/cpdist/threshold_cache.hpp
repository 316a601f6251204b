#pragma once

// On-disk and in-process cache for Monte-Carlo threshold tables.
//
// Entries are flat vectors of doubles addressed by a descriptive key string.
// Files live in $CPDIST_CACHE_DIR (or ~/.cache/cpdist), are written to a
// temporary name and renamed into place, and carry the key so that a hash
// collision or a stale format is detected and treated as a miss. Deleting
// the directory is always safe.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace cpdist {

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ThresholdCache {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  /// Process-wide instance used by the detectors.
  static ThresholdCache& global() {
    static ThresholdCache cache;
    return cache;
  }

  /// Resolves the directory: explicit override, then $CPDIST_CACHE_DIR,
  /// then ~/.cache/cpdist. Empty result disables the disk layer.
  static std::filesystem::path resolve_dir(const std::string& override_dir = {}) {
    if (!override_dir.empty()) return override_dir;
    if (const char* env = std::getenv("CPDIST_CACHE_DIR"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home) {
      return std::filesystem::path(home) / ".cache" / "cpdist";
    }
    return {};
  }

  std::optional<std::vector<double>> load(const std::string& key, const std::string& dir_override = {}) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    const auto dir = resolve_dir(dir_override);
    if (dir.empty()) return std::nullopt;
    auto data = read_file(dir / file_name(key), key);
    if (data) {
      std::lock_guard lock(mutex_);
      memo_[key] = *data;
    }
    return data;
  }

  void store(const std::string& key, const std::vector<double>& data, const std::string& dir_override = {}) {
    {
      std::lock_guard lock(mutex_);
      memo_[key] = data;
    }
    const auto dir = resolve_dir(dir_override);
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) return;  // the cache is an optimisation; an unwritable directory is not an error
    const auto target = dir / file_name(key);
    auto tmp = target;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) return;
      out.write("CPDT", 4);
      write_pod(out, kFormatVersion);
      write_pod(out, static_cast<std::uint64_t>(key.size()));
      out.write(key.data(), static_cast<std::streamsize>(key.size()));
      write_pod(out, static_cast<std::uint64_t>(data.size()));
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
      if (!out) {
        out.close();
        std::filesystem::remove(tmp, ec);
        return;
      }
    }
    std::filesystem::rename(tmp, target, ec);
    if (ec) std::filesystem::remove(tmp, ec);
  }

  void clear_memory() {
    std::lock_guard lock(mutex_);
    memo_.clear();
  }

  /// Serialises expensive regeneration so two threads asking for the same
  /// missing table do not both simulate it.
  std::mutex& generation_mutex() { return generation_mutex_; }

 private:
  static std::string file_name(const std::string& key) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx.bin", static_cast<unsigned long long>(fnv1a(key)));
    return buf;
  }

  template <class T>
  static void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }

  template <class T>
  static bool read_pod(std::ifstream& in, T& v) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof v));
  }

  static std::optional<std::vector<double>> read_file(const std::filesystem::path& path, const std::string& key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CPDT", 4) != 0) return std::nullopt;
    std::uint32_t version = 0;
    std::uint64_t key_len = 0;
    if (!read_pod(in, version) || version != kFormatVersion) return std::nullopt;
    if (!read_pod(in, key_len) || key_len != key.size()) return std::nullopt;
    std::string stored(key_len, '\0');
    if (!in.read(stored.data(), static_cast<std::streamsize>(key_len)) || stored != key) return std::nullopt;
    std::uint64_t n = 0;
    if (!read_pod(in, n) || n > (std::uint64_t{1} << 32)) return std::nullopt;
    std::vector<double> data(n);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      return std::nullopt;
    }
    return data;
  }

  std::mutex mutex_;
  std::mutex generation_mutex_;
  std::map<std::string, std::vector<double>> memo_;
};

}  // namespace cpdist
