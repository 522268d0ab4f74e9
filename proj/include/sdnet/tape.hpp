#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sdnet/tensor.hpp"

namespace sdnet {

// Reverse-mode tape, rebuilt on every forward pass (define-by-run). Nodes are
// appended in topological order: every parent id precedes its child. A node's
// backward rule receives the gradient of the root w.r.t. the node's value and
// accumulates into the parents' gradient slots.
template <typename T>
class TapeT {
public:
    using BackwardFn = std::function<void(TapeT<T>&, const std::vector<T>&)>;

    int add_node(const char* tag, Shape shape, std::vector<int> parents, BackwardFn backward) {
        const int id = static_cast<int>(nodes_.size());
        for (int p : parents)
            if (p >= id) throw ContractError(std::string("tape: parent ") + std::to_string(p) +
                                             " does not precede node " + std::to_string(id));
        nodes_.push_back(Node{tag, std::move(shape), std::move(parents), std::move(backward)});
        return id;
    }

    // Registers a leaf (parameter or input) so gradients can be collected for it.
    int watch(TensorT<T>& t) {
        const int id = add_node("leaf", t.shape(), {}, nullptr);
        t.set_node(id);
        return id;
    }

    // Backpropagates from a scalar-valued node. Gradients accumulate (+=) when
    // a node feeds several consumers.
    void backward(int root) {
        if (root < 0 || root >= static_cast<int>(nodes_.size()))
            throw ContractError("backward: unknown root node " + std::to_string(root));
        if (shape_numel(nodes_[static_cast<size_t>(root)].shape) != 1)
            throw ContractError("backward: root must be scalar-valued, got shape " +
                                shape_str(nodes_[static_cast<size_t>(root)].shape));
        grads_.assign(nodes_.size(), {});
        grads_[static_cast<size_t>(root)] = {T(1)};
        for (int i = root; i >= 0; --i) {
            auto& slot = grads_[static_cast<size_t>(i)];
            if (slot.empty()) continue;
            const Node& node = nodes_[static_cast<size_t>(i)];
            if (node.backward) node.backward(*this, slot);
        }
    }

    // Returns the gradient slot for a node, zero-initialized on first touch,
    // or nullptr for constants (id == kNoNode). Backward rules accumulate
    // into it directly.
    std::vector<T>* slot(int id, size_t numel) {
        if (id == kNoNode) return nullptr;
        auto& s = grads_[static_cast<size_t>(id)];
        if (s.empty()) s.assign(numel, T(0));
        return &s;
    }

    void accumulate(int id, const T* g, size_t n) {
        auto* s = slot(id, n);
        if (!s) return;
        for (size_t i = 0; i < n; ++i) (*s)[i] += g[i];
    }
    void accumulate(int id, const std::vector<T>& g) { accumulate(id, g.data(), g.size()); }

    bool has_grad(int id) const {
        return id >= 0 && id < static_cast<int>(grads_.size()) &&
               !grads_[static_cast<size_t>(id)].empty();
    }

    TensorT<T> grad(int id) const {
        if (!has_grad(id))
            throw ContractError("no gradient recorded for node " + std::to_string(id));
        return TensorT<T>(nodes_[static_cast<size_t>(id)].shape, grads_[static_cast<size_t>(id)]);
    }

    // Moves a gradient out of the tape (avoids the copy in grad()).
    std::vector<T> take_grad(int id) {
        if (!has_grad(id))
            throw ContractError("no gradient recorded for node " + std::to_string(id));
        return std::move(grads_[static_cast<size_t>(id)]);
    }

    const Shape& node_shape(int id) const { return nodes_[static_cast<size_t>(id)].shape; }
    const char* node_tag(int id) const { return nodes_[static_cast<size_t>(id)].tag; }
    const std::vector<int>& node_parents(int id) const {
        return nodes_[static_cast<size_t>(id)].parents;
    }
    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
    }

private:
    struct Node {
        const char* tag;
        Shape shape;
        std::vector<int> parents;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
};

using Tape = TapeT<float>;

}  // namespace sdnet
