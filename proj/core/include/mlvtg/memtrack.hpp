#pragma once

#include <cstddef>

// Process-wide counter of live tensor buffer bytes. Serves as the peak
// allocation proxy reported by the efficiency harness.
namespace mlvtg::memtrack {

void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);

std::size_t current_bytes();
std::size_t peak_bytes();

// Restart the peak watermark at the current live total.
void reset_peak();

}  // namespace mlvtg::memtrack
