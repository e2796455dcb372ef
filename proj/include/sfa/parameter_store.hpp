#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sfa/autograd.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

enum class Group : std::uint8_t { backbone_att, backbone_mlp, backbone_other, adapter, head };

std::string_view group_name(Group group);
Group parse_group(std::string_view name);
bool is_backbone(Group group);

struct ParameterEntry {
    std::string name;
    Group group;
    Tensor value;
    bool requires_grad = false;
};

/// Ordered, uniquely named parameter tensors. Iteration order is insertion order.
class ParameterStore {
public:
    std::size_t add(std::string name, Group group, Tensor value);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    ParameterEntry& entry(std::size_t slot) { return entries_.at(slot); }
    const ParameterEntry& entry(std::size_t slot) const { return entries_.at(slot); }
    std::optional<std::size_t> find(std::string_view name) const;
    std::size_t slot_of(std::string_view name) const;
    Tensor& value(std::string_view name) { return entries_[slot_of(name)].value; }
    const Tensor& value(std::string_view name) const { return entries_[slot_of(name)].value; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// Exact scalar count in one group.
    std::size_t count(Group group) const;
    /// Scalars across backbone-att, backbone-mlp and backbone-other.
    std::size_t count_backbone() const;
    std::size_t count_all() const;

    void set_requires_grad(bool flag);
    void set_requires_grad(Group group, bool flag);

    /// Removes every entry of a group, keeping the relative order of the rest.
    void erase_group(Group group);

private:
    std::vector<ParameterEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients aligned with ParameterStore slots. Entries that did not require
/// a gradient hold an empty tensor.
class GradientMap {
public:
    GradientMap() = default;
    explicit GradientMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    std::size_t size() const { return grads_.size(); }
    bool has(std::size_t slot) const { return slot < grads_.size() && !grads_[slot].empty(); }
    const Tensor& operator[](std::size_t slot) const { return grads_.at(slot); }
    Tensor& operator[](std::size_t slot) { return grads_.at(slot); }
    const Tensor& at(const ParameterStore& store, std::string_view name) const { return grads_.at(store.slot_of(name)); }

private:
    std::vector<Tensor> grads_;
};

/// Binds a stored parameter as a leaf on the tape.
Var<float> bind(Tape<float>& tape, const ParameterStore& store, std::size_t slot);

/// Runs backward and gathers parameter gradients. Every requires_grad entry
/// gets a tensor of its shape, zero when no path reaches the loss.
GradientMap backward(Tape<float>& tape, Var<float> loss, const ParameterStore& store);

struct Snapshot {
    std::vector<std::string> names;
    std::vector<Group> groups;
    std::vector<Tensor> values;
    bool empty() const { return names.empty(); }
};

Snapshot snapshot(const ParameterStore& store);

/// Restores every entry. Throws if the name sets differ.
void restore(ParameterStore& store, const Snapshot& snap);

/// Restores only entries of the listed groups; others are untouched.
void restore(ParameterStore& store, const Snapshot& snap, std::initializer_list<Group> groups);

}  // namespace sfa
