#include "reflex/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace reflex {

int default_workers() {
  if (const char* env = std::getenv("REFLEX_WORKERS")) {
    try {
      int w = std::stoi(env);
      if (w > 0)
        return w;
    } catch (...) {
    }
  }
  return omp_get_max_threads();
}

} // namespace reflex
