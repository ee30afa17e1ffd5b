#include "saelab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace saelab {

std::size_t default_workers() {
  if (const char* env = std::getenv("SAELAB_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace saelab
