#pragma once

namespace puzzlegan {

// True when PUZZLEGAN_DETERMINISTIC=1 is set in the environment.
bool deterministic_mode_requested();

// Deterministic mode pins torch to one intra-op thread and enables its
// deterministic kernels, so every reduction runs in a fixed order. All
// accumulations in this library outside torch are sequential in sample
// order. Call once at startup; safe to call repeatedly.
void configure_runtime(bool deterministic);

}  // namespace puzzlegan
