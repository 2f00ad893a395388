#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stabkit/tensor.hpp"

namespace stabkit {

// Wengert list. Entries are appended in forward order; backward replays the
// local-gradient rules in exact reverse order. Fan-out sums because every
// rule accumulates (+=) into the shared grad buffers. The list survives
// backward, so a second pass after zeroing grads reproduces the same
// gradients.
class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> backward) {
    entries_.push_back({op, std::move(backward)});
  }

  void track(const Tensor& t) {
    if (t.requires_grad()) tracked_.push_back(t);
  }

  std::size_t size() const { return entries_.size(); }

  void backward(Tensor& loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be a single element, got " +
                                  shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::invalid_argument("backward: loss is not connected to this tape");
    loss.grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  void zero_grads() {
    for (auto& t : tracked_) t.zero_grad();
  }

  void clear() {
    entries_.clear();
    tracked_.clear();
  }

 private:
  std::vector<Entry> entries_;
  std::vector<Tensor> tracked_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// Activates a tape for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace stabkit
