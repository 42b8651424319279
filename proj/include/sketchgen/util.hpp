#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace sketchgen {

// Chunked parallel map over [0, n). Results must be written into
// index-addressed slots by `fn`; reductions over those slots in index order
// stay deterministic regardless of thread scheduling.
inline void parallel_for(std::size_t n, unsigned jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = std::thread::hardware_concurrency();
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(n));
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) fn(i);
    });
  }
  for (std::thread& t : workers) t.join();
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

inline std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
inline constexpr std::uint64_t kFnvBasis = 1469598103934665603ULL;

// Fixed-precision decimal, used everywhere a CSV must be byte-reproducible.
std::string format_double(double v, int precision = 6);

}  // namespace sketchgen
