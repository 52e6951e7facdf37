// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace cnnlab {

// CNNLAB_THREADS if set and positive, else 1
std::size_t default_threads();

// calls fn(begin, end) on contiguous chunks of [0, n); results must not
// depend on the chunking
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace cnnlab
