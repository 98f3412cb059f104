#include "sky/tape.hpp"

namespace sky {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : parent_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = parent_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(TapeNode node) {
    node.output->on_tape = true;
    nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& output) {
    if (!output.defined() || output.numel() != 1)
        throw ContractError("backward requires a single-element output tensor");
    if (!output.impl()->on_tape && !output.requires_grad())
        throw ContractError("backward output was not produced by tape-recorded operations");

    // Intermediate grads are per-sweep state; leaves are never node outputs,
    // so their accumulated gradients survive across sweeps.
    for (auto& n : nodes_) n.output->grad.clear();

    output.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not on the path to the output
        it->backward();
    }
}

void backward(const Tensor& scalar_output) {
    Tape* t = Tape::active();
    if (!t) throw ContractError("backward called with no active tape");
    t->backward(scalar_output);
}

}  // namespace sky
