#include "camenn/params.hpp"

#include <algorithm>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

Tensor& ParamStore::add(const std::string& name, Shape shape) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
        throw ContractError("invalid parameter name '" + name + "'");
    if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    auto e = std::make_unique<Entry>();
    e->name = name;
    e->tensor = Tensor(std::move(shape));
    e->tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back()->tensor;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second]->tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second]->tensor;
}

std::size_t ParamStore::value_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e->tensor.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e->tensor.zero_grad();
}

void init_uniform(Tensor& t, double bound, std::uint64_t seed, const std::string& name) {
    const std::uint64_t base = hash_combine(seed, fnv1a64(name));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * hash_unit(hash_combine(base, i)) - 1.0);
}

void init_constant(Tensor& t, double value) { std::fill(t.data().begin(), t.data().end(), value); }

}  // namespace camenn
