#include "redct/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "redct/errors.hpp"

namespace redct {

void Tape::record(std::string name, const Tensor& output, BackwardFn fn) {
    entries_.push_back(Entry{std::move(name), output, std::move(fn)});
}

void Tape::accumulate(const Tensor& t, std::span<const double> grad) {
    if (!t.requires_grad()) return;
    if (grad.size() != t.numel()) {
        throw ShapeMismatch("gradient of size " + std::to_string(grad.size()) +
                            " for tensor " + shape_string(t.shape()));
    }
    auto [it, inserted] = grads_.try_emplace(t.id());
    auto& buf = it->second;
    if (inserted) {
        buf.assign(grad.begin(), grad.end());
        return;
    }
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += grad[i];
}

Tensor Tape::grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), it->second);
}

bool Tape::has_grad(const Tensor& t) const { return grads_.contains(t.id()); }

std::vector<std::string> Tape::op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.name);
    return names;
}

void Tape::clear() {
    entries_.clear();
    grads_.clear();
}

void backward(Tape& tape, const Tensor& loss) {
    if (loss.numel() != 1) throw NotScalar("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    const double one = 1.0;
    tape.accumulate(loss, std::span<const double>(&one, 1));
    for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
        auto g = tape.grads_.find(it->output.id());
        if (g == tape.grads_.end()) continue;
        // The callback may insert new buffers; copy so the span stays valid.
        const std::vector<double> grad_output = g->second;
        it->fn(grad_output, tape);
    }
}

double grad_check(const ScalarFn& fn, const Tensor& input, double epsilon) {
    const Tensor x = input.as_leaf();
    Tape tape;
    const Tensor loss = fn(x, &tape);
    backward(tape, loss);
    const Tensor analytic = tape.grad(x);

    std::vector<double> probe(x.values().begin(), x.values().end());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + epsilon;
        const double up = fn(Tensor(x.shape(), probe), nullptr).item();
        probe[i] = saved - epsilon;
        const double down = fn(Tensor(x.shape(), probe), nullptr).item();
        probe[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace redct
