#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dscope/tensor.hpp"

namespace dscope {

// Reverse-mode tape over double tensors. Ops append nodes in execution order,
// which is already topological, so one reverse sweep visits each node exactly
// once. A tape is confined to the thread that created it; forward evaluation
// without an active tape records nothing and is safe to run concurrently.
class GradTape {
   public:
    GradTape() {
        prev_ = active_slot();
        active_slot() = this;
    }
    ~GradTape() { active_slot() = prev_; }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active() { return active_slot(); }

    bool tracked(const Tensor& t) const { return index_.count(t.id()) != 0; }

    // Node id for t, registering a leaf if needed. Returns -1 for tensors
    // that neither require grad nor derive from one.
    int node_of(const Tensor& t) {
        auto it = index_.find(t.id());
        if (it != index_.end()) return it->second;
        if (!t.requires_grad()) return -1;
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{t.id(), t.size(), {}, nullptr});
        index_.emplace(t.id(), id);
        return id;
    }

    using BackwardFn = std::function<void(const std::vector<double>& out_grad, GradTape& tape)>;

    // Register `out` as the result of an op whose inputs include at least one
    // tracked tensor. `backward` receives d(loss)/d(out) and must accumulate
    // into the parents' buffers via accumulate().
    void record(const Tensor& out, std::vector<int> parents, BackwardFn backward) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{out.id(), out.size(), std::move(parents), std::move(backward)});
        index_.emplace(out.id(), id);
    }

    void accumulate(int node, const double* grad, std::size_t n) {
        if (node < 0) return;
        auto& buf = grads_[node];
        if (buf.empty()) buf.assign(nodes_[node].numel, 0.0);
        for (std::size_t i = 0; i < n; ++i) buf[i] += grad[i];
    }

    std::vector<double>& buffer(int node) {
        auto& buf = grads_[node];
        if (buf.empty()) buf.assign(nodes_[node].numel, 0.0);
        return buf;
    }

    bool has_grad(int node) const { return node >= 0 && !grads_[node].empty(); }

    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
        auto it = index_.find(loss.id());
        if (it == index_.end()) throw Error("backward: loss is not on this tape");
        grads_.assign(nodes_.size(), {});
        grads_[it->second] = {1.0};
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (grads_[i].empty() || !nodes_[i].backward) continue;
            nodes_[i].backward(grads_[i], *this);
        }
        ran_backward_ = true;
    }

    // Gradient of t; exactly zero for tensors with no path to the loss.
    Tensor grad(const Tensor& t) const {
        if (!ran_backward_) throw Error("grad: backward() has not run");
        auto it = index_.find(t.id());
        if (it == index_.end() || grads_[it->second].empty())
            return Tensor::zeros(t.shape());
        return Tensor(t.shape(), grads_[it->second]);
    }

    std::size_t node_count() const { return nodes_.size(); }

   private:
    struct Node {
        std::uint64_t tensor_id;
        std::size_t numel;
        std::vector<int> parents;
        BackwardFn backward;
    };

    static GradTape*& active_slot() {
        thread_local GradTape* slot = nullptr;
        return slot;
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::uint64_t, int> index_;
    std::vector<std::vector<double>> grads_;
    GradTape* prev_ = nullptr;
    bool ran_backward_ = false;
};

}  // namespace dscope
