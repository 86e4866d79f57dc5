#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fbts {

/// Raised when any task in a batch fails; carries the lowest failing index.
class PoolTaskError : public std::runtime_error {
public:
    PoolTaskError(std::size_t index, const std::string& what)
        : std::runtime_error("task " + std::to_string(index) + ": " + what), index_(index) {}
    std::size_t task_index() const { return index_; }

private:
    std::size_t index_;
};

/// Runs `count` pure tasks over `width` workers and returns results in index
/// order, so any width produces results identical to serial execution.
template <typename R>
std::vector<R> worker_pool_execute(std::size_t count, int width,
                                   const std::function<R(std::size_t)>& task) {
    if (width < 1) throw std::invalid_argument("worker_pool_execute: width must be >= 1");
    std::vector<std::optional<R>> slots(count);
    if (width == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                slots[i] = task(i);
            } catch (const PoolTaskError&) {
                throw;
            } catch (const std::exception& e) {
                throw PoolTaskError(i, e.what());
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::pair<std::size_t, std::exception_ptr>> failures(count);
        std::vector<std::thread> workers;
        const int spawn = static_cast<int>(std::min<std::size_t>(width, count));
        for (int w = 0; w < spawn; ++w) {
            workers.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= count) return;
                    try {
                        slots[i] = task(i);
                    } catch (...) {
                        failures[i] = {i, std::current_exception()};
                    }
                }
            });
        }
        for (auto& worker : workers) worker.join();
        for (std::size_t i = 0; i < count; ++i) {
            if (failures[i].second) {
                try {
                    std::rethrow_exception(failures[i].second);
                } catch (const std::exception& e) {
                    throw PoolTaskError(i, e.what());
                } catch (...) {
                    throw PoolTaskError(i, "unknown error");
                }
            }
        }
    }
    std::vector<R> results;
    results.reserve(count);
    for (std::size_t i = 0; i < count; ++i) results.push_back(std::move(*slots[i]));
    return results;
}

} // namespace fbts
