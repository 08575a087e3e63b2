#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

enum class ParamGroup { Prompt, Gate, Coupling, Backbone, GateNet };

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Prompt: return "prompt";
        case ParamGroup::Gate: return "gate";
        case ParamGroup::Coupling: return "coupling";
        case ParamGroup::Backbone: return "backbone";
        case ParamGroup::GateNet: return "gate_net";
    }
    return "?";
}

// A named tensor with an immutable group tag. Frozen parameters never receive
// gradient updates and never appear in a GradientMap.
struct Parameter {
    std::string name;
    ParamGroup group;
    bool frozen = false;
    Tensor value;

    Parameter(std::string n, ParamGroup g, Tensor v, bool freeze = false)
        : name(std::move(n)), group(g), frozen(freeze), value(std::move(v)) {}
};

// mapping parameter name -> gradient tensor of identical shape
using GradientMap = std::map<std::string, Tensor>;

// Owning registry of parameters for one model assembly.
class ParamStore {
public:
    Parameter& add(std::string name, ParamGroup group, Tensor value, bool frozen = false) {
        if (index_.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
        params_.push_back(std::make_unique<Parameter>(name, group, std::move(value), frozen));
        index_[params_.back()->name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        return *params_[it->second];
    }

    const Parameter& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    std::vector<Parameter*> trainable() {
        std::vector<Parameter*> out;
        for (auto& p : params_)
            if (!p->frozen) out.push_back(p.get());
        return out;
    }

    std::vector<Parameter*> in_group(ParamGroup g) {
        std::vector<Parameter*> out;
        for (auto& p : params_)
            if (p->group == g) out.push_back(p.get());
        return out;
    }

    std::size_t count_elements(ParamGroup g, bool trainable_only = false) const {
        std::size_t n = 0;
        for (auto& p : params_)
            if (p->group == g && (!trainable_only || !p->frozen)) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

} // namespace gatelab
