#pragma once

// Runs evaluation work on threads with a large native stack, so that deep
// (but bounded) recursion in user programs hits the interpreter's depth cap
// instead of the process stack limit.

#include <pthread.h>

#include <cstddef>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <system_error>
#include <type_traits>
#include <utility>

namespace wm {

inline constexpr std::size_t kEvalStackBytes = std::size_t{512} << 20;

class BigStackThread {
 public:
  explicit BigStackThread(std::function<void()> fn) : fn_(std::move(fn)) {
    pthread_attr_t attr;
    pthread_attr_init(&attr);
    pthread_attr_setstacksize(&attr, kEvalStackBytes);
    const int rc = pthread_create(&thread_, &attr, &BigStackThread::trampoline, this);
    pthread_attr_destroy(&attr);
    if (rc != 0) throw std::system_error(rc, std::generic_category(), "pthread_create");
    started_ = true;
  }
  BigStackThread(const BigStackThread&) = delete;
  BigStackThread& operator=(const BigStackThread&) = delete;
  ~BigStackThread() {
    if (started_ && !joined_) pthread_join(thread_, nullptr);
  }

  /// Waits for the thread and rethrows anything it threw.
  void join() {
    if (!joined_) {
      pthread_join(thread_, nullptr);
      joined_ = true;
    }
    if (error_) std::rethrow_exception(error_);
  }

 private:
  static void* trampoline(void* self) {
    auto* t = static_cast<BigStackThread*>(self);
    try {
      t->fn_();
    } catch (...) {
      t->error_ = std::current_exception();
    }
    return nullptr;
  }

  std::function<void()> fn_;
  pthread_t thread_{};
  std::exception_ptr error_;
  bool started_ = false;
  bool joined_ = false;
};

/// Runs `fn` to completion on a large-stack thread and returns its result.
template <typename F>
auto on_big_stack(F&& fn) -> decltype(fn()) {
  using R = decltype(fn());
  if constexpr (std::is_void_v<R>) {
    BigStackThread t([&] { fn(); });
    t.join();
  } else {
    std::optional<R> result;
    BigStackThread t([&] { result.emplace(fn()); });
    t.join();
    return std::move(*result);
  }
}

}  // namespace wm
