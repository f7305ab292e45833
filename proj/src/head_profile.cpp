#include "kvsim/head_profile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "kvsim/attention.hpp"

namespace kvsim {

using ordered_json = nlohmann::ordered_json;

double compute_threshold(double s, double eta, double p) {
    if (!(s >= 0.0 && s <= 1.0)) throw ArgumentError("importance must lie in [0, 1]");
    if (!(eta > -1.0 && eta <= 1.0)) throw ArgumentError("eta must lie in (-1, 1]");
    if (!(p >= 1.0)) throw ArgumentError("p must be at least 1");
    const double theta_star = std::acos(eta);
    const double lambda = std::pow(s, p);
    const double theta = lambda * theta_star + (1.0 - lambda) * std::numbers::pi;
    return std::cos(theta);
}

double compute_difficulty(double tau, double s_hat, double epsilon) {
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
    return tau - (s_hat - epsilon);
}

FitResult fit_importance(const std::vector<BlendSample>& samples) {
    if (samples.empty()) throw ArgumentError("no samples to fit");
    double num = 0.0, den = 0.0;
    for (const BlendSample& s : samples) {
        if (s.full.size() != s.streaming.size() || s.full.size() != s.target.size())
            throw ShapeError("blend sample vectors must have equal length");
        for (size_t i = 0; i < s.full.size(); ++i) {
            const double d = s.full[i] - s.streaming[i];
            num += (s.target[i] - s.streaming[i]) * d;
            den += d * d;
        }
    }
    if (den == 0.0) return {0.0, true};
    return {std::clamp(num / den, 0.0, 1.0), false};
}

std::vector<double> profile_similarity(const QueryTrace& trace) {
    if (trace.num_q_heads <= 0) throw ArgumentError("trace has no query heads");
    if (trace.sequences.empty()) throw ArgumentError("trace has no sequences");
    std::vector<double> sum(trace.num_q_heads, 0.0);
    uint64_t pairs = 0;
    for (const auto& seq : trace.sequences) {
        if (seq.size() < 2)
            throw ArgumentError("similarity profiling needs at least two steps per sequence");
        for (size_t t = 0; t + 1 < seq.size(); ++t) {
            const Matrix& a = seq[t];
            const Matrix& b = seq[t + 1];
            if (a.rows != trace.num_q_heads || b.rows != trace.num_q_heads)
                throw ShapeError("trace step row count does not match num_q_heads");
            for (int h = 0; h < trace.num_q_heads; ++h)
                sum[h] += cosine_similarity(a.row_span(h), b.row_span(h)).value;
            ++pairs;
        }
    }
    for (double& v : sum) v /= static_cast<double>(pairs);
    return sum;
}

double kv_importance_of_group(std::span<const double> q_importance) {
    if (q_importance.empty()) throw ArgumentError("empty importance group");
    return *std::max_element(q_importance.begin(), q_importance.end());
}

double kv_s_hat_of_group(std::span<const double> q_s_hat) {
    if (q_s_hat.empty()) throw ArgumentError("empty similarity group");
    return *std::min_element(q_s_hat.begin(), q_s_hat.end());
}

PartitionPlan plan_partition(const HeadProfiles& profiles, const PartitionCosts& costs) {
    if (profiles.empty()) throw ArgumentError("no profiles to partition");
    if (!(costs.t_comp_s > 0.0) || !(costs.pcie_bw > 0.0) || !(costs.mem_head_bytes > 0.0))
        throw ArgumentError("partition cost terms must be positive");

    PartitionPlan plan;
    plan.n_p = static_cast<int>(std::floor(costs.t_comp_s * costs.pcie_bw / costs.mem_head_bytes));
    plan.layers.resize(profiles.size());

    for (size_t l = 0; l < profiles.size(); ++l) {
        LayerPartition& lp = plan.layers[l];
        std::vector<int> order(profiles[l].size());
        for (size_t h = 0; h < order.size(); ++h) order[h] = static_cast<int>(h);
        if (l == 0) {
            // Layer-0 transfers have no preceding compute to hide behind.
            lp.persistent_heads = order;
            lp.n_d = 0;
            for (size_t h = 0; h < profiles[l].size(); ++h)
                if (profiles[l][h].difficulty > 0.0) ++lp.n_d;
            lp.n_persist = static_cast<int>(order.size());
            continue;
        }
        std::vector<int> positive;
        for (int h : order)
            if (profiles[l][h].difficulty > 0.0) positive.push_back(h);
        lp.n_d = static_cast<int>(positive.size());
        lp.n_persist = std::max(lp.n_d - plan.n_p, 0);
        std::sort(positive.begin(), positive.end(), [&](int a, int b) {
            if (profiles[l][a].difficulty != profiles[l][b].difficulty)
                return profiles[l][a].difficulty > profiles[l][b].difficulty;
            return a < b;
        });
        positive.resize(lp.n_persist);
        std::sort(positive.begin(), positive.end());
        lp.persistent_heads = std::move(positive);
    }

    auto total_bytes = [&]() {
        uint64_t bytes = 0;
        for (const LayerPartition& lp : plan.layers)
            bytes += static_cast<uint64_t>(lp.persistent_heads.size()) * costs.persist_bytes_per_head;
        return bytes;
    };

    const uint64_t layer0_bytes =
        static_cast<uint64_t>(plan.layers[0].persistent_heads.size()) * costs.persist_bytes_per_head;
    if (costs.hbm_budget_bytes > 0 && layer0_bytes > costs.hbm_budget_bytes)
        throw ConfigError("HBM budget cannot hold the mandatory layer-0 heads");

    if (costs.hbm_budget_bytes > 0) {
        // Trim lowest-difficulty persistent heads (never from layer 0) until
        // the plan fits; record what was given up.
        while (total_bytes() > costs.hbm_budget_bytes) {
            int drop_layer = -1, drop_head = -1;
            double drop_diff = 0.0;
            for (size_t l = 1; l < plan.layers.size(); ++l)
                for (int h : plan.layers[l].persistent_heads) {
                    const double d = profiles[l][h].difficulty;
                    if (drop_layer < 0 || d < drop_diff) {
                        drop_layer = static_cast<int>(l);
                        drop_head = h;
                        drop_diff = d;
                    }
                }
            if (drop_layer < 0)
                throw ConfigError("HBM budget infeasible even with no optional persistent heads");
            auto& heads = plan.layers[drop_layer].persistent_heads;
            heads.erase(std::find(heads.begin(), heads.end(), drop_head));
            plan.layers[drop_layer].n_persist = static_cast<int>(heads.size());
            plan.budget_dropped.emplace_back(drop_layer, drop_head);
        }
    }
    plan.persistent_bytes = total_bytes();
    return plan;
}

void apply_partition(HeadProfiles& profiles, const PartitionPlan& plan) {
    if (plan.layers.size() != profiles.size())
        throw ShapeError("plan layer count does not match profiles");
    for (size_t l = 0; l < profiles.size(); ++l) {
        for (auto& entry : profiles[l]) entry.placement = Placement::kOffloaded;
        for (int h : plan.layers[l].persistent_heads)
            profiles[l][h].placement = Placement::kPersistent;
    }
}

std::string plan_to_json(const PartitionPlan& plan) {
    ordered_json doc;
    doc["n_p"] = plan.n_p;
    doc["persistent_bytes"] = plan.persistent_bytes;
    doc["budget_dropped"] = ordered_json::array();
    for (const auto& [l, h] : plan.budget_dropped)
        doc["budget_dropped"].push_back(ordered_json::array({l, h}));
    doc["layers"] = ordered_json::array();
    for (size_t l = 0; l < plan.layers.size(); ++l) {
        ordered_json layer;
        layer["layer"] = l;
        layer["n_d"] = plan.layers[l].n_d;
        layer["n_persist"] = plan.layers[l].n_persist;
        layer["persistent_heads"] = plan.layers[l].persistent_heads;
        doc["layers"].push_back(std::move(layer));
    }
    return doc.dump(2) + "\n";
}

PartitionPlan plan_from_json(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("plan file is not valid JSON: ") + e.what());
    }
    try {
        PartitionPlan plan;
        plan.n_p = doc.at("n_p").get<int>();
        plan.persistent_bytes = doc.at("persistent_bytes").get<uint64_t>();
        for (const auto& pair : doc.at("budget_dropped"))
            plan.budget_dropped.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        for (const auto& layer : doc.at("layers")) {
            LayerPartition lp;
            lp.n_d = layer.at("n_d").get<int>();
            lp.n_persist = layer.at("n_persist").get<int>();
            lp.persistent_heads = layer.at("persistent_heads").get<std::vector<int>>();
            plan.layers.push_back(std::move(lp));
        }
        return plan;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("malformed plan file: ") + e.what());
    }
}

void write_plan(const std::string& path, const PartitionPlan& plan) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open plan file for writing: " + path);
    out << plan_to_json(plan);
    if (!out) throw IoError("failed writing plan file: " + path);
}

PartitionPlan read_plan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open plan file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return plan_from_json(ss.str());
}

std::string profiles_to_json(const HeadProfiles& profiles, double eta, double p, double epsilon) {
    ordered_json doc;
    doc["eta"] = eta;
    doc["p"] = p;
    doc["epsilon"] = epsilon;
    doc["layers"] = ordered_json::array();
    for (size_t l = 0; l < profiles.size(); ++l) {
        ordered_json layer;
        layer["layer"] = l;
        layer["heads"] = ordered_json::array();
        for (size_t h = 0; h < profiles[l].size(); ++h) {
            const HeadProfileEntry& e = profiles[l][h];
            ordered_json rec;
            rec["kv_head"] = h;
            rec["q_importance"] = e.q_importance;
            rec["kv_importance"] = e.kv_importance;
            rec["s_hat"] = e.s_hat;
            rec["tau"] = e.tau;
            rec["difficulty"] = e.difficulty;
            rec["placement"] = e.placement == Placement::kPersistent ? "persistent" : "offloaded";
            layer["heads"].push_back(std::move(rec));
        }
        doc["layers"].push_back(std::move(layer));
    }
    return doc.dump(2) + "\n";
}

HeadProfiles profiles_from_json(const std::string& text, double* eta, double* p,
                                double* epsilon) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("profile file is not valid JSON: ") + e.what());
    }
    try {
        if (eta) *eta = doc.at("eta").get<double>();
        if (p) *p = doc.at("p").get<double>();
        if (epsilon) *epsilon = doc.at("epsilon").get<double>();
        HeadProfiles profiles;
        for (const auto& layer : doc.at("layers")) {
            std::vector<HeadProfileEntry> row;
            for (const auto& rec : layer.at("heads")) {
                HeadProfileEntry e;
                e.q_importance = rec.at("q_importance").get<std::vector<double>>();
                e.kv_importance = rec.at("kv_importance").get<double>();
                e.s_hat = rec.at("s_hat").get<double>();
                e.tau = rec.at("tau").get<double>();
                e.difficulty = rec.at("difficulty").get<double>();
                e.placement = rec.at("placement").get<std::string>() == "persistent"
                                  ? Placement::kPersistent
                                  : Placement::kOffloaded;
                row.push_back(std::move(e));
            }
            profiles.push_back(std::move(row));
        }
        return profiles;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("malformed profile file: ") + e.what());
    }
}

void write_profiles(const std::string& path, const HeadProfiles& profiles, double eta, double p,
                    double epsilon) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open profile file for writing: " + path);
    out << profiles_to_json(profiles, eta, p, epsilon);
    if (!out) throw IoError("failed writing profile file: " + path);
}

HeadProfiles read_profiles(const std::string& path, double* eta, double* p, double* epsilon) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open profile file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return profiles_from_json(ss.str(), eta, p, epsilon);
}

}  // namespace kvsim
