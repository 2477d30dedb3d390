#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "camenn/tensor.hpp"

namespace camenn {

/// Named trainable tensors in registration order. Addresses are stable for the
/// lifetime of the store, so tapes may alias them.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    /// Registers a zero-filled trainable tensor; names must be unique.
    Tensor& add(const std::string& name, Shape shape);

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const noexcept { return entries_.size(); }
    Entry& entry(std::size_t i) { return *entries_[i]; }
    const Entry& entry(std::size_t i) const { return *entries_[i]; }

    std::size_t value_count() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<Entry>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Fills `t` with values uniform in [-bound, bound], a pure function of
/// (seed, name, index).
void init_uniform(Tensor& t, double bound, std::uint64_t seed, const std::string& name);
void init_constant(Tensor& t, double value);

}  // namespace camenn
