#pragma once

#include <cstddef>
#include <functional>

namespace stormcast {

// Runs body(i) for i in [0, n) on up to worker_threads() threads. Each index
// runs exactly once; callers write to disjoint outputs so results do not
// depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace stormcast
