#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sky/tensor.hpp"

namespace sky {

/// One executed operation: which tensors fed it, which tensor it produced,
/// and the local rule that maps the output gradient onto the inputs.
struct TapeNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
};

/// Ordered record of executed operations for reverse-mode differentiation.
///
/// A Tape activates itself for the constructing thread for its lifetime;
/// operations record onto the innermost active tape when any input wants a
/// gradient. Execution order is a topological order by construction, so
/// backward() is a single reverse sweep that visits each node exactly once.
/// The tape is confined to one thread; with no active tape, operations run
/// in pure inference mode and record nothing.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    static bool recording() { return active() != nullptr; }

    void record(TapeNode node);
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar output. Leaf gradients accumulate: calling
    /// backward repeatedly (on this or later tapes) adds into leaf .grad until
    /// the caller clears them; intermediate gradients are reset per sweep.
    void backward(const Tensor& output);

private:
    std::vector<TapeNode> nodes_;
    Tape* parent_ = nullptr;
};

/// backward() on the innermost active tape (the [OP] entry point).
void backward(const Tensor& scalar_output);

}  // namespace sky
