#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/analysis.hpp"
#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/training.hpp"

namespace l2d {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Instance (distribution + expert panel) <-> JSON, bit-exact for doubles
// ---------------------------------------------------------------------------

inline json to_json(const DeferralInstance& inst) {
    json doc;
    doc["n"] = inst.dist.n;
    doc["n_e"] = inst.panel.size();
    json points = json::array();
    for (const auto& p : inst.dist.points) {
        json jp;
        jp["id"] = p.id;
        jp["features"] = p.features;
        jp["weight"] = p.weight;
        jp["conditional"] = p.conditional;
        points.push_back(std::move(jp));
    }
    doc["points"] = std::move(points);
    json experts = json::array();
    for (const auto& e : inst.panel.experts) {
        if (e.kind == CostKind::table)
            throw config_error("serialize: table-cost experts have no document form");
        if (e.scale != 1.0)
            throw config_error("serialize: panels are serialized in raw (unscaled) form");
        json je;
        je["kind"] = to_string(e.kind);
        je["beta"] = e.beta;
        json preds = json::object();
        for (std::size_t i = 0; i < e.predictions.size(); ++i)
            preds[inst.dist.points[i].id] = e.predictions[i];
        je["predictions"] = std::move(preds);
        experts.push_back(std::move(je));
    }
    doc["experts"] = std::move(experts);
    return doc;
}

inline DeferralInstance instance_from_json(const json& doc) {
    DeferralInstance inst;
    try {
        inst.dist.n = doc.at("n").get<int>();
        const int n_e = doc.at("n_e").get<int>();
        for (const auto& jp : doc.at("points")) {
            DistPoint p;
            p.id = jp.at("id").get<std::string>();
            p.features = jp.at("features").get<std::vector<double>>();
            p.weight = jp.at("weight").get<double>();
            p.conditional = jp.at("conditional").get<std::vector<double>>();
            inst.dist.points.push_back(std::move(p));
        }
        for (const auto& je : doc.at("experts")) {
            Expert e;
            e.kind = cost_kind_from_string(je.at("kind").get<std::string>());
            e.beta = je.at("beta").get<double>();
            e.lower_bound = e.kind == CostKind::misclassification_plus_base ? e.beta : 0.0;
            e.upper_bound = e.kind == CostKind::misclassification_plus_base ? 1.0 + e.beta : 1.0;
            const auto& preds = je.at("predictions");
            e.predictions.resize(inst.dist.points.size());
            for (std::size_t i = 0; i < inst.dist.points.size(); ++i) {
                const auto it = preds.find(inst.dist.points[i].id);
                if (it == preds.end())
                    throw config_error("instance document: expert lacks a prediction for point " +
                                       inst.dist.points[i].id);
                e.predictions[i] = it->get<Label>();
            }
            inst.panel.experts.push_back(std::move(e));
        }
        if (inst.panel.size() != n_e)
            throw config_error("instance document: expert count does not match n_e");
    } catch (const json::exception& e) {
        throw config_error(std::string("instance document: ") + e.what());
    }
    inst.dist.validate(1e-9);
    return inst;
}

// ---------------------------------------------------------------------------
// ScoreModel <-> JSON
// ---------------------------------------------------------------------------

inline json to_json(const ScoreModel& m) {
    json doc;
    doc["architecture"] = m.arch == ModelClassKind::linear ? "linear" : "mlp2";
    doc["input_dim"] = m.input_dim;
    doc["hidden_dim"] = m.hidden_dim;
    doc["output_dim"] = m.output_dim;
    doc["weights"] = {{"w1", m.w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}};
    return doc;
}

inline ScoreModel model_from_json(const json& doc) {
    ScoreModel m;
    try {
        const std::string arch = doc.at("architecture").get<std::string>();
        if (arch == "linear") m.arch = ModelClassKind::linear;
        else if (arch == "mlp2") m.arch = ModelClassKind::mlp2;
        else throw config_error("model document: unknown architecture " + arch);
        m.input_dim = doc.at("input_dim").get<int>();
        m.hidden_dim = doc.at("hidden_dim").get<int>();
        m.output_dim = doc.at("output_dim").get<int>();
        const auto& w = doc.at("weights");
        m.w1 = w.at("w1").get<std::vector<double>>();
        m.b1 = w.at("b1").get<std::vector<double>>();
        m.w2 = w.at("w2").get<std::vector<double>>();
        m.b2 = w.at("b2").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw config_error(std::string("model document: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Reports -> JSON
// ---------------------------------------------------------------------------

inline json to_json(const RegretReport& rep) {
    json doc;
    json per_point = json::array();
    for (const auto& p : rep.per_point) {
        per_point.push_back({{"deferral_loss", p.deferral_loss},
                             {"deferral_optimal", p.deferral_optimal},
                             {"deferral_regret", p.deferral_regret},
                             {"surrogate_loss", p.surrogate_loss},
                             {"surrogate_optimal", p.surrogate_optimal},
                             {"surrogate_regret", p.surrogate_regret}});
    }
    doc["per_point"] = std::move(per_point);
    doc["expected_deferral_regret"] = rep.expected_deferral_regret;
    doc["expected_surrogate_regret"] = rep.expected_surrogate_regret;
    doc["expected_deferral_loss"] = rep.e_def;
    doc["best_in_class_deferral_loss"] = rep.e_def_star;
    doc["expected_surrogate_loss"] = rep.e_sur;
    doc["best_in_class_surrogate_loss"] = rep.e_sur_star;
    doc["minimizability_gap_deferral"] = rep.m_def;
    doc["minimizability_gap_surrogate"] = rep.m_sur;
    doc["approximation_error_deferral"] = rep.a_def;
    doc["approximation_error_surrogate"] = rep.a_sur;
    return doc;
}

inline json to_json(const BoundRecord& rec) {
    return json{{"lhs", rec.lhs},
                {"rhs", rec.rhs},
                {"rhs_with_constants", rec.rhs_with_constants},
                {"slack", rec.slack},
                {"holds", rec.holds}};
}

// ---------------------------------------------------------------------------
// CSV (comma separated, '.' decimal, LF, 17 significant digits)
// ---------------------------------------------------------------------------

inline std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    CsvWriter& begin_row() {
        rows_.emplace_back();
        return *this;
    }
    CsvWriter& cell(const std::string& v) {
        rows_.back().push_back(v);
        return *this;
    }
    CsvWriter& cell(double v) { return cell(csv_double(v)); }
    CsvWriter& cell(long v) { return cell(std::to_string(v)); }
    CsvWriter& cell(int v) { return cell(std::to_string(v)); }
    CsvWriter& cell(std::uint64_t v) { return cell(std::to_string(v)); }
    CsvWriter& cell(bool v) { return cell(std::string(v ? "true" : "false")); }

    std::string str() const {
        std::string out = join(header_);
        for (const auto& row : rows_) out += join(row);
        return out;
    }

    void write_file(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw config_error("cannot write " + path.string());
        f << str();
    }

private:
    static std::string join(const std::vector<std::string>& cells) {
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += ',';
            line += cells[i];
        }
        line += '\n';
        return line;
    }
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot write " + path.string());
    f << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

} // namespace l2d
