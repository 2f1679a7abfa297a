// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace csk {

/// Worker count used by conv kernels. Defaults to 1; read once from
/// CSKNET_THREADS by the CLI. Results are bitwise deterministic for any fixed
/// count because work is split into static contiguous chunks and partial
/// reductions are combined in chunk order.
void set_num_threads(int n);
int num_threads() noexcept;

/// Calls fn(chunk, begin, end) over a static partition of [0, count) into at
/// most num_threads() chunks.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& fn);

/// Number of chunks parallel_for will use for `count` items.
std::size_t chunk_count(std::size_t count) noexcept;

}  // namespace csk
