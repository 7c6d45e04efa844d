#include "contextseg/parallel.hpp"

#include <cstdlib>
#include <string>

namespace contextseg {

int worker_threads() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("CONTEXTSEG_THREADS");
  if (env == nullptr || *env == '\0') return static_cast<int>(hw);
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used != std::string(env).size() || n < 0) return static_cast<int>(hw);
    return n == 0 ? 1 : n;
  } catch (const std::exception&) {
    return static_cast<int>(hw);
  }
}

}  // namespace contextseg
