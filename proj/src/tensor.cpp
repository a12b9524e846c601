#include "nechdr/tensor.hpp"

namespace nechdr {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

namespace {
thread_local bool tls_grad_enabled = true;
}

Graph& Graph::local() {
  thread_local Graph graph;
  return graph;
}

void Graph::replay_reverse() {
  // Steps may not be appended while replaying; take ownership first.
  auto steps = std::move(steps_);
  steps_.clear();
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) (*it)();
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("backward() needs a scalar (1,1,1,1) loss, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a loss that is not attached to the graph");
  }
  loss.grad_buffer()[0] += T(1);
  NoGradGuard guard;
  Graph::local().replay_reverse();
}

template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace nechdr
