#pragma once

#include <functional>
#include <vector>

#include "tgda/common.hpp"
#include "tgda/tensor.hpp"

namespace tgda {

// Reverse-mode tape. Ops append one node per recorded operation; nodes are
// therefore already in topological order and backward() simply walks them in
// reverse. The tape is confined to one logical training thread.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    check(!consumed_, ErrorKind::kContract,
          "tape: recording after backward; reset() or use a fresh tape");
    nodes_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be scalar.
  void backward(Tensor<T>& loss) {
    check(!consumed_, ErrorKind::kContract, "tape: backward called twice without re-recording");
    check(loss.numel() == 1, ErrorKind::kContract,
          "tape: backward expects a scalar loss, got shape " + shape_str(loss.shape()));
    consumed_ = true;
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

}  // namespace tgda
