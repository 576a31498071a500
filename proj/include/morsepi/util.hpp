#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <future>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace morsepi {

// FNV-1a, used for content hashes embedded in output files. Stable across
// platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a_hex(std::string_view data) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a(data);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// Worker cap for embarrassingly parallel loops. Controlled by
// MORSE_PI1_THREADS; default is sequential.
inline int thread_limit() {
    const char* env = std::getenv("MORSE_PI1_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    if (n < 1) return 1;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0 && n > hw) n = hw;
    return n;
}

// Applies fn to 0..n-1 and returns results in index order, so the outcome is
// identical no matter how the work is scheduled.
template <typename T>
std::vector<T> parallel_map(int n, const std::function<T(int)>& fn) {
    std::vector<T> out(static_cast<size_t>(n));
    int workers = thread_limit();
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fn(i);
        return out;
    }
    std::vector<std::future<void>> futs;
    futs.reserve(static_cast<size_t>(workers));
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w) {
        futs.push_back(std::async(std::launch::async, [&]() {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                out[static_cast<size_t>(i)] = fn(i);
            }
        }));
    }
    for (auto& f : futs) f.get();
    return out;
}

}
