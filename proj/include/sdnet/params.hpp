#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sdnet/tensor.hpp"

namespace sdnet {

// Ordered name -> tensor map. Iteration follows insertion order, so parameter
// enumeration (and therefore initialization, Adam state and checkpoints) is
// deterministic. Non-trainable entries hold state such as batchnorm running
// statistics.
template <typename T>
class ParamStoreT {
public:
    struct Entry {
        std::string name;
        TensorT<T> tensor;
        bool trainable;
    };

    TensorT<T>& add(const std::string& name, TensorT<T> tensor, bool trainable = true) {
        if (index_.count(name)) throw ContractError("parameter '" + name + "' already registered");
        index_.emplace(name, entries_.size());
        entries_.push_back(Entry{name, std::move(tensor), trainable});
        return entries_.back().tensor;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return entries_[it->second].tensor;
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return entries_[it->second].tensor;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    int64_t trainable_count() const {
        int64_t total = 0;
        for (const auto& e : entries_)
            if (e.trainable) total += static_cast<int64_t>(e.tensor.size());
        return total;
    }

    // Deep copy (detached buffers).
    ParamStoreT clone() const {
        ParamStoreT out;
        for (const auto& e : entries_) {
            TensorT<T> t(e.tensor.shape(), e.tensor.data());
            out.add(e.name, std::move(t), e.trainable);
        }
        return out;
    }

    template <typename U>
    ParamStoreT<U> cast() const {
        ParamStoreT<U> out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>(), e.trainable);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

}  // namespace sdnet
