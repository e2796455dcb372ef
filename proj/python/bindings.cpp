#include <map>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sfa/adapter.hpp"
#include "sfa/budget.hpp"
#include "sfa/checkpoint.hpp"
#include "sfa/config.hpp"
#include "sfa/delta.hpp"
#include "sfa/errors.hpp"
#include "sfa/gradcheck.hpp"
#include "sfa/reports.hpp"
#include "sfa/trainer.hpp"

namespace py = pybind11;
using namespace sfa;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
    py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.raw());
    return t;
}

// Masks cross the boundary as {tensor name: [(index, round), ...]}.
py::dict mask_to_dict(const SelectionMask& mask) {
    py::dict d;
    for (const auto& t : mask.tensors()) {
        if (t.indices.empty()) {
            continue;
        }
        py::list entries;
        for (std::size_t i = 0; i < t.indices.size(); ++i) {
            entries.append(py::make_tuple(t.indices[i], t.rounds[i]));
        }
        d[py::str(t.name)] = entries;
    }
    return d;
}

SelectionMask mask_from_dict(const Model& base, const py::dict& d) {
    SelectionMask mask = SelectionMask::for_pool(SelectionPool::build(base.params()));
    std::map<std::uint16_t, std::vector<std::pair<std::string, std::uint32_t>>> by_round;
    for (const auto& [key, value] : d) {
        const auto name = key.cast<std::string>();
        for (const auto& item : value.cast<py::list>()) {
            const auto [index, round] = item.cast<std::pair<std::uint32_t, std::uint16_t>>();
            by_round[round].emplace_back(name, index);
        }
    }
    for (const auto& [round, picks] : by_round) {
        std::vector<std::pair<std::string_view, std::uint32_t>> views(picks.begin(), picks.end());
        mask.add_round(round, views);
    }
    return mask;
}

struct PyRun {
    Model model;
    SelectionMask mask;
    std::string report_json;
};

PyRun wrap(RunResult r) { return PyRun{std::move(r.model), std::move(r.mask), report_to_json(r.report)}; }

ExperimentConfig config_of(const std::string& json_text) { return parse_config(json_text); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core: ViT backbone, budgeted selection, adapters, persistence.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<Model>(m, "Model")
        .def_static(
            "build", [](const std::string& config_json, std::uint64_t seed) {
                return Model::build(config_of(config_json).backbone, seed);
            },
            py::arg("config_json") = "{}", py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p).model; })
        .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(p, self); })
        .def("to_bytes", [](const Model& self) {
            const auto b = encode_checkpoint(self);
            return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        })
        .def("predict", [](const Model& self, const FloatArray& images) {
            const Tensor in = from_numpy(images);
            Tensor out;
            {
                py::gil_scoped_release release;
                out = self.predict(in);
            }
            return to_numpy(out);
        })
        .def_property_readonly("backbone_param_count", &Model::backbone_param_count)
        .def_property_readonly("param_names", [](const Model& self) {
            std::vector<std::string> names;
            for (const auto& e : self.params()) {
                names.push_back(e.name);
            }
            return names;
        })
        .def("param", [](const Model& self, const std::string& name) { return to_numpy(self.params().value(name)); })
        .def("param_group", [](const Model& self, const std::string& name) {
            return group_name(self.params().entry(self.params().slot_of(name)).group);
        });

    py::class_<PyRun>(m, "RunResult")
        .def_readonly("model", &PyRun::model)
        .def_readonly("report_json", &PyRun::report_json)
        .def_property_readonly("mask", [](const PyRun& r) { return mask_to_dict(r.mask); })
        .def_property_readonly("mask_size", [](const PyRun& r) { return r.mask.size(); })
        .def("delta_bytes", [](const PyRun& r, const Model& base) {
            const auto b = export_delta(r.model, r.mask, base);
            return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        });

    m.def(
        "pretrain", [](const std::string& config_json) {
            const auto c = config_of(config_json);
            py::gil_scoped_release release;
            return pretrain(c.backbone, c.source, c.pretrain_steps, c.pretrain_seed).model;
        },
        py::arg("config_json") = "{}");

    m.def(
        "adapt", [](const Model& base, const std::string& config_json, const std::string& kind) {
            const auto c = config_of(config_json);
            const RunKind k = parse_run_kind(kind);
            py::gil_scoped_release release;
            return wrap(k == RunKind::sfa ? run_sfa(base, c.target, c.train) : run_baseline(base, c.target, c.train, k));
        },
        py::arg("base"), py::arg("config_json") = "{}", py::arg("kind") = "sfa");

    m.def(
        "adapt_with_mask", [](const Model& base, const py::dict& mask, const std::string& config_json) {
            const auto c = config_of(config_json);
            SelectionMask sm = mask_from_dict(base, mask);
            py::gil_scoped_release release;
            return wrap(adapt_with_mask(base, c.target, c.train, sm));
        },
        py::arg("base"), py::arg("mask"), py::arg("config_json") = "{}");

    m.def("apply_delta", [](const Model& base, const py::bytes& delta) {
        const std::string_view s(delta);
        const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
        AppliedDelta d = apply_delta(base, bytes);
        return py::make_tuple(std::move(d.model), mask_to_dict(d.mask));
    });

    m.def("evaluate", [](const Model& model, const std::string& config_json) {
        const auto c = config_of(config_json);
        const Dataset val = make_val_set(c.target);
        Metrics mt;
        {
            py::gil_scoped_release release;
            mt = evaluate(model, val);
        }
        py::dict d;
        d["name"] = mt.name;
        d["value"] = mt.value;
        return d;
    });

    m.def("budget_plan", [](double beta, double rho, std::size_t n) {
        const auto p = BudgetPlan::make(beta, rho, n);
        py::dict d;
        d["beta_e"] = p.beta_e;
        d["beta_i"] = p.beta_i;
        d["total"] = p.total_quota;
        d["external"] = p.external_quota;
        d["internal"] = p.internal_quota;
        return d;
    });
    m.def("solve_dimension", &solve_dimension, py::arg("budget"), py::arg("embed_dim"), py::arg("num_sites"));
    m.def("gradcheck", [](std::size_t draws, std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& r : gradcheck_all(draws, seed)) {
            out.emplace_back(r.op, r.max_error);
        }
        return out;
    }, py::arg("draws") = 3, py::arg("seed") = 0);
    m.def("default_config_json", [] { return config_to_json(ExperimentConfig{}); });
}
