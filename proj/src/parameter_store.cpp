#include "sfa/parameter_store.hpp"

#include <algorithm>
#include <stdexcept>

namespace sfa {

std::string_view group_name(Group group) {
    switch (group) {
    case Group::backbone_att: return "backbone-att";
    case Group::backbone_mlp: return "backbone-mlp";
    case Group::backbone_other: return "backbone-other";
    case Group::adapter: return "adapter";
    case Group::head: return "head";
    }
    return "?";
}

Group parse_group(std::string_view name) {
    for (auto g : {Group::backbone_att, Group::backbone_mlp, Group::backbone_other, Group::adapter, Group::head}) {
        if (group_name(g) == name) {
            return g;
        }
    }
    throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

bool is_backbone(Group group) {
    return group == Group::backbone_att || group == Group::backbone_mlp || group == Group::backbone_other;
}

std::size_t ParameterStore::add(std::string name, Group group, Tensor value) {
    if (index_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    const std::size_t slot = entries_.size();
    index_.emplace(name, slot);
    entries_.push_back(ParameterEntry{std::move(name), group, std::move(value), false});
    return slot;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t ParameterStore::slot_of(std::string_view name) const {
    auto slot = find(name);
    if (!slot) {
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }
    return *slot;
}

std::size_t ParameterStore::count(Group group) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.group == group) {
            n += e.value.size();
        }
    }
    return n;
}

std::size_t ParameterStore::count_backbone() const {
    return count(Group::backbone_att) + count(Group::backbone_mlp) + count(Group::backbone_other);
}

std::size_t ParameterStore::count_all() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.value.size();
    }
    return n;
}

void ParameterStore::set_requires_grad(bool flag) {
    for (auto& e : entries_) {
        e.requires_grad = flag;
    }
}

void ParameterStore::set_requires_grad(Group group, bool flag) {
    for (auto& e : entries_) {
        if (e.group == group) {
            e.requires_grad = flag;
        }
    }
}

void ParameterStore::erase_group(Group group) {
    std::erase_if(entries_, [group](const ParameterEntry& e) { return e.group == group; });
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        index_.emplace(entries_[i].name, i);
    }
}

Var<float> bind(Tape<float>& tape, const ParameterStore& store, std::size_t slot) {
    const auto& e = store.entry(slot);
    return tape.parameter(e.value, e.requires_grad, static_cast<std::int64_t>(slot));
}

GradientMap backward(Tape<float>& tape, Var<float> loss, const ParameterStore& store) {
    tape.backward(loss);
    std::vector<Tensor> grads(store.size());
    for (std::size_t slot = 0; slot < store.size(); ++slot) {
        const auto& e = store.entry(slot);
        if (e.requires_grad) {
            grads[slot] = Tensor(e.value.shape());
        }
    }
    for (auto id : tape.parameter_nodes()) {
        const auto slot = static_cast<std::size_t>(tape.slot(id));
        if (slot >= grads.size() || !tape.requires_grad(id)) {
            continue;
        }
        Tensor g = tape.take_grad(id);
        auto& dst = grads[slot];
        for (std::size_t i = 0; i < g.size(); ++i) {
            dst[i] += g[i];
        }
    }
    return GradientMap(std::move(grads));
}

Snapshot snapshot(const ParameterStore& store) {
    Snapshot snap;
    for (const auto& e : store) {
        snap.names.push_back(e.name);
        snap.groups.push_back(e.group);
        snap.values.push_back(e.value);
    }
    return snap;
}

namespace {

void check_names(const ParameterStore& store, const Snapshot& snap) {
    bool same = store.size() == snap.names.size();
    for (std::size_t i = 0; same && i < snap.names.size(); ++i) {
        same = store.entry(i).name == snap.names[i] && store.entry(i).value.shape() == snap.values[i].shape();
    }
    if (!same) {
        throw std::invalid_argument("restore: snapshot does not match the parameter store layout");
    }
}

}  // namespace

void restore(ParameterStore& store, const Snapshot& snap) {
    check_names(store, snap);
    for (std::size_t i = 0; i < snap.values.size(); ++i) {
        store.entry(i).value = snap.values[i];
    }
}

void restore(ParameterStore& store, const Snapshot& snap, std::initializer_list<Group> groups) {
    check_names(store, snap);
    for (std::size_t i = 0; i < snap.values.size(); ++i) {
        if (std::find(groups.begin(), groups.end(), store.entry(i).group) != groups.end()) {
            store.entry(i).value = snap.values[i];
        }
    }
}

}  // namespace sfa
