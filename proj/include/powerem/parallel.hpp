#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace powerem {

// Every batch kernel has a serial reference path and an OpenMP path that must
// agree bit-for-bit: each index is computed by the same code, only the
// scheduling differs.
enum class Exec { serial, parallel };

int max_threads();
// Caps the OpenMP team size; n <= 0 leaves the runtime default.
void set_max_threads(int n);

// Calls fn(i) for i in [0, n). Under Exec::parallel the first exception by
// index is rethrown after the loop, matching what the serial path would throw.
template <class Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::size_t error_index = n;
    std::mutex guard;
    const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(guard);
            if (static_cast<std::size_t>(i) < error_index) {
                error_index = static_cast<std::size_t>(i);
                error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

} // namespace powerem
