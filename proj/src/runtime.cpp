#include "puzzlegan/runtime.hpp"

#include <cstdlib>
#include <string_view>

#include <torch/torch.h>

namespace puzzlegan {

bool deterministic_mode_requested() {
  const char* v = std::getenv("PUZZLEGAN_DETERMINISTIC");
  return v != nullptr && std::string_view(v) == "1";
}

void configure_runtime(bool deterministic) {
  if (deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
  }
}

}  // namespace puzzlegan
