// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace orient {

/// Worker cap: hardware concurrency, further limited by ORIENT_THREADS.
int worker_count();

/// Runs body(i) for i in [0, n) with a static contiguous partition. Each index
/// is visited exactly once, so results written per index do not depend on the
/// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace orient
