// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/parallel.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>
#include <vector>

namespace csk {
namespace {
int g_threads = 1;
}

void set_num_threads(int n) {
    if (n < 1) throw std::invalid_argument("thread count must be >= 1");
    g_threads = n;
}

int num_threads() noexcept { return g_threads; }

std::size_t chunk_count(std::size_t count) noexcept {
    return std::max<std::size_t>(1, std::min<std::size_t>(count, static_cast<std::size_t>(g_threads)));
}

void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t chunks = chunk_count(count);
    if (chunks == 1) {
        fn(0, 0, count);
        return;
    }
    const std::size_t step = (count + chunks - 1) / chunks;
    std::vector<std::jthread> workers;
    workers.reserve(chunks - 1);
    for (std::size_t k = 1; k < chunks; ++k) {
        const std::size_t begin = std::min(count, k * step);
        const std::size_t end = std::min(count, begin + step);
        workers.emplace_back([&fn, k, begin, end] { fn(k, begin, end); });
    }
    fn(0, 0, std::min(count, step));
}

}  // namespace csk
