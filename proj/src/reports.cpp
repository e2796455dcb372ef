#include "sfa/reports.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "codec.hpp"
#include "sfa/errors.hpp"
#include "sfa/io.hpp"

namespace sfa {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::pair<std::string, double> axis_value(const RunReport& r, SweepAxis axis) {
    switch (axis) {
    case SweepAxis::beta: return {fmt(r.beta), r.beta};
    case SweepAxis::middle_dim: return {std::to_string(r.middle_dim), static_cast<double>(r.middle_dim)};
    case SweepAxis::step_size:
        // A single up-front round is reported as step size 0.
        if (r.rounds == 1 && r.step_size == 1) {
            return {"0", 0.0};
        }
        return {std::to_string(r.step_size), static_cast<double>(r.step_size)};
    case SweepAxis::criterion: return {r.criterion, 0.0};
    }
    return {"", 0.0};
}

}  // namespace

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::beta: return "budget";
    case SweepAxis::middle_dim: return "dim";
    case SweepAxis::step_size: return "step-size";
    case SweepAxis::criterion: return "criterion";
    }
    return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
    for (auto a : {SweepAxis::beta, SweepAxis::middle_dim, SweepAxis::step_size, SweepAxis::criterion}) {
        if (sweep_axis_name(a) == name) {
            return a;
        }
    }
    throw ConfigError("unknown sweep '" + name + "' (expected budget, dim, step-size or criterion)");
}

std::string report_to_json(const RunReport& report) { return codec::to_json(report).dump(2); }

RunReport report_from_json(const std::string& text) {
    try {
        return codec::report_from_json(codec::Json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
}

std::vector<SweepRow> summarize(std::span<const RunReport> reports, SweepAxis axis) {
    std::map<std::string, std::vector<const RunReport*>> groups;
    std::map<std::string, double> sort_keys;
    for (const auto& r : reports) {
        auto [key, sk] = axis_value(r, axis);
        groups[key].push_back(&r);
        sort_keys[key] = sk;
    }
    std::vector<SweepRow> rows;
    for (const auto& [key, runs] : groups) {
        SweepRow row{key, sort_keys[key], runs.size(), 0.0, 0.0, 0.0};
        for (const auto* r : runs) {
            row.metric_mean += r->final_metric;
            row.trainable_mean += static_cast<double>(r->trainable_total());
        }
        const double n = static_cast<double>(runs.size());
        row.metric_mean /= n;
        row.trainable_mean /= n;
        for (const auto* r : runs) {
            row.metric_std += (r->final_metric - row.metric_mean) * (r->final_metric - row.metric_mean);
        }
        row.metric_std = std::sqrt(row.metric_std / n);
        rows.push_back(std::move(row));
    }
    if (axis != SweepAxis::criterion) {
        std::stable_sort(rows.begin(), rows.end(),
                         [](const SweepRow& a, const SweepRow& b) { return a.sort_key < b.sort_key; });
    }
    return rows;
}

std::string history_csv(const RunReport& report) {
    std::ostringstream os;
    os << "step,loss,metric,trainable_count\n";
    for (const auto& e : report.history) {
        os << e.step << ',' << fmt(e.loss) << ',' << fmt(e.metric) << ',' << e.trainable_count << '\n';
    }
    return os.str();
}

std::string layer_csv(const RunReport& report) {
    std::ostringstream os;
    os << "layer,att_fraction,mlp_fraction,att_selected,att_pool,mlp_selected,mlp_pool\n";
    for (const auto& l : report.layers) {
        os << l.layer << ',' << fmt(l.att_fraction()) << ',' << fmt(l.mlp_fraction()) << ',' << l.att_selected << ','
           << l.att_pool << ',' << l.mlp_selected << ',' << l.mlp_pool << '\n';
    }
    return os.str();
}

std::string sweep_csv(std::span<const RunReport> reports, SweepAxis axis) {
    static const char* headers[] = {"beta", "middle_dim", "step_size", "criterion"};
    std::ostringstream os;
    os << headers[static_cast<int>(axis)] << ",runs,metric_mean,metric_std,trainable_mean\n";
    for (const auto& row : summarize(reports, axis)) {
        os << row.key << ',' << row.runs << ',' << fmt(row.metric_mean) << ',' << fmt(row.metric_std) << ','
           << fmt(row.trainable_mean) << '\n';
    }
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_run_reports(const std::filesystem::path& dir, const RunReport& report) {
    write_text(dir / "report.json", report_to_json(report) + "\n");
    write_text(dir / "history.csv", history_csv(report));
    write_text(dir / "layers.csv", layer_csv(report));
}

}  // namespace sfa
