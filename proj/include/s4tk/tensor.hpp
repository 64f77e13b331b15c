#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"

namespace s4tk::core {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    for (int d : s) {
        if (d <= 0) throw DimensionError("shape " + shape_str(s) + " has non-positive dim");
    }
}

// Row-major strides.
inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // empty until used; same length as data otherwise
    bool requires_grad = false;
    bool leaf = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

// Dense f32 array with optional reverse-mode gradient. A Tensor is a cheap
// shared handle; data is immutable once an op has recorded it on a tape.
// Leaf tensors (parameters) may be mutated between tapes.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<float> data) {
        check_shape_valid(shape);
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return constant(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f));
    }

    static Tensor full(Shape shape, float v) {
        auto n = shape_numel(shape);
        return constant(std::move(shape), std::vector<float>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(float v) { return constant({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }

    const std::vector<float>& data() const { return node_->data; }
    // Leaf-only mutation, between optimization steps.
    std::vector<float>& mutable_data() { return node_->data; }
    const std::vector<float>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), 0.0f);
    }

    float item() const {
        if (node_->data.size() != 1)
            throw DimensionError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
        return node_->data[0];
    }

    float at(std::initializer_list<int> idx) const {
        if (idx.size() != node_->shape.size())
            throw IndexError("at(): " + std::to_string(idx.size()) + " indices for rank " +
                             std::to_string(node_->shape.size()));
        auto st = row_major_strides(node_->shape);
        int64_t off = 0;
        size_t i = 0;
        for (int v : idx) {
            if (v < 0 || v >= node_->shape[i])
                throw IndexError("at(): index " + std::to_string(v) + " out of range for axis " +
                                 std::to_string(i) + " of " + shape_str(node_->shape));
            off += v * st[i++];
        }
        return node_->data[static_cast<size_t>(off)];
    }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode tape. Ops record themselves on the active tape (RAII scope);
// backward() replays the records once, in reverse order. Leaf gradients
// accumulate across backward calls; callers zero them explicitly.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* current() { return active_; }

    Tensor leaf(Shape shape, std::vector<float> data, bool requires_grad = true) {
        Tensor t = Tensor::constant(std::move(shape), std::move(data));
        t.node()->requires_grad = requires_grad;
        t.node()->leaf = true;
        return t;
    }

    void record(std::vector<std::shared_ptr<TensorNode>> inputs,
                std::shared_ptr<TensorNode> output, std::function<void()> backward) {
        records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
    }

    size_t num_records() const { return records_.size(); }

    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1)
            throw DimensionError("backward() requires a defined scalar loss");
        if (!std::isfinite(loss.item()))
            throw NumericError("backward() on non-finite loss value");
        // Fresh gradients for every recorded intermediate; leaves keep theirs.
        for (auto& r : records_) {
            r.output->grad.assign(r.output->data.size(), 0.0f);
            for (auto& in : r.inputs)
                if (in->requires_grad) in->ensure_grad();
        }
        loss.node()->ensure_grad();
        loss.node()->grad[0] += 1.0f;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
    }

    void clear() { records_.clear(); }

private:
    struct Record {
        std::vector<std::shared_ptr<TensorNode>> inputs;
        std::shared_ptr<TensorNode> output;
        std::function<void()> backward;
    };

    std::vector<Record> records_;
    static inline thread_local Tape* active_ = nullptr;
};

// Internal helper shared by all op implementations.
namespace detail {

inline Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                          const std::function<std::function<void()>(std::shared_ptr<TensorNode>)>& bind_backward) {
    Tensor out = Tensor::constant(std::move(shape), std::move(data));
    bool needs_grad = false;
    for (const auto& in : inputs)
        if (in.requires_grad()) needs_grad = true;
    Tape* tape = Tape::current();
    if (needs_grad && tape) {
        out.node()->requires_grad = true;
        std::vector<std::shared_ptr<TensorNode>> in_nodes;
        in_nodes.reserve(inputs.size());
        for (const auto& in : inputs) in_nodes.push_back(in.node());
        tape->record(std::move(in_nodes), out.node(), bind_backward(out.node()));
    }
    return out;
}

} // namespace detail

} // namespace s4tk::core
