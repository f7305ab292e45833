#include "kvsim/pipeline_sim.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

namespace kvsim {

using ordered_json = nlohmann::ordered_json;

double transfer_time(uint64_t bytes, TransferEngine engine, const CostModel& cm) {
    if (!(cm.pcie_peak_bw > 0.0)) throw ArgumentError("bandwidth must be positive");
    if (bytes == 0) return 0.0;
    double bw = cm.pcie_peak_bw;
    if (engine == TransferEngine::kGatherCopy) {
        if (!(cm.gather_efficiency > 0.0 && cm.gather_efficiency <= 1.0))
            throw ArgumentError("gather_efficiency must lie in (0, 1]");
        bw *= cm.gather_efficiency;
    }
    return static_cast<double>(bytes) / bw;
}

LayerTiming schedule_layer(const LayerPlan& plan, const CostModel& cm, SyncMode sync_mode) {
    if (plan.mgmt_s < 0.0 || plan.retrieval_s < 0.0 || plan.compute_window_prev_s < 0.0)
        throw ArgumentError("negative time in layer plan");
    if (plan.n_sync_events < 0) throw ArgumentError("negative sync event count");
    if (!(cm.t_comp_s >= 0.0)) throw ArgumentError("t_comp must be non-negative");
    if (plan.prefetch_enabled && plan.layer == 0)
        throw ContractError("layer 0 has no preceding compute window to prefetch under");

    LayerTiming t;
    t.layer = plan.layer;
    t.compute_s = cm.t_comp_s;
    t.transfer_s = transfer_time(plan.transfer_bytes, plan.engine, cm);
    t.hidden_s = plan.prefetch_enabled ? std::min(t.transfer_s, plan.compute_window_prev_s) : 0.0;
    t.exposed_s = t.transfer_s - t.hidden_s;
    t.mgmt_s = plan.mgmt_s;
    t.sync_s = cm.sync_bubble(sync_mode) * plan.n_sync_events;
    t.retrieval_s = plan.retrieval_s;
    t.total_s = t.compute_s + t.exposed_s + t.mgmt_s + t.sync_s + t.retrieval_s;
    return t;
}

namespace {

void accumulate(LayerTiming& into, const LayerTiming& add) {
    into.compute_s += add.compute_s;
    into.transfer_s += add.transfer_s;
    into.hidden_s += add.hidden_s;
    into.exposed_s += add.exposed_s;
    into.mgmt_s += add.mgmt_s;
    into.sync_s += add.sync_s;
    into.retrieval_s += add.retrieval_s;
    into.total_s += add.total_s;
}

}  // namespace

void PipelineTimeline::add_step(const std::vector<LayerPlan>& step_plan, const CostModel& cm,
                                SyncMode sync_mode) {
    if (per_layer.empty()) {
        per_layer.resize(step_plan.size());
        for (size_t l = 0; l < step_plan.size(); ++l) per_layer[l].layer = static_cast<int>(l);
    }
    if (per_layer.size() != step_plan.size())
        throw ShapeError("step plan layer count changed mid-run");
    for (size_t l = 0; l < step_plan.size(); ++l) {
        LayerTiming t = schedule_layer(step_plan[l], cm, sync_mode);
        accumulate(per_layer[l], t);
        accumulate(totals, t);
    }
    ++steps;
}

PipelineTimeline run_breakdown(const std::vector<std::vector<LayerPlan>>& step_plans,
                               const CostModel& cm, SyncMode sync_mode) {
    PipelineTimeline tl;
    for (const auto& step : step_plans) tl.add_step(step, cm, sync_mode);
    return tl;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void append_row(std::string& csv, const std::string& label, const LayerTiming& t) {
    csv += label;
    for (double v : {t.compute_s, t.exposed_s, t.hidden_s, t.mgmt_s, t.sync_s, t.retrieval_s,
                     t.total_s}) {
        csv += ',';
        csv += fmt(v);
    }
    csv += '\n';
}

ordered_json row_json(const LayerTiming& t) {
    ordered_json row;
    row["compute_s"] = t.compute_s;
    row["transfer_s"] = t.exposed_s;
    row["hidden_s"] = t.hidden_s;
    row["mgmt_s"] = t.mgmt_s;
    row["sync_s"] = t.sync_s;
    row["retrieval_s"] = t.retrieval_s;
    row["total_s"] = t.total_s;
    return row;
}

}  // namespace

std::string breakdown_to_csv(const PipelineTimeline& tl) {
    std::string csv = "layer,compute_s,transfer_s,hidden_s,mgmt_s,sync_s,retrieval_s,total_s\n";
    for (const LayerTiming& t : tl.per_layer) append_row(csv, std::to_string(t.layer), t);
    append_row(csv, "total", tl.totals);
    return csv;
}

std::string breakdown_to_json(const PipelineTimeline& tl) {
    ordered_json doc;
    doc["steps"] = tl.steps;
    doc["layers"] = ordered_json::array();
    for (const LayerTiming& t : tl.per_layer) {
        ordered_json row = row_json(t);
        ordered_json full;
        full["layer"] = t.layer;
        full.update(row);
        doc["layers"].push_back(std::move(full));
    }
    doc["total"] = row_json(tl.totals);
    return doc.dump(2) + "\n";
}

}  // namespace kvsim
